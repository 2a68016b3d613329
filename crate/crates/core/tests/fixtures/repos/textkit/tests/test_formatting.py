import unittest

from textkit.formatting import indent, justify, slugify, truncate, wrap


class FormattingTest(unittest.TestCase):
    def test_wrap(self):
        self.assertEqual(wrap("aaa bb cc dddd", 6), ["aaa bb", "cc", "dddd"])
        self.assertEqual(wrap("", 4), [])
        with self.assertRaises(ValueError):
            wrap("x", 0)

    def test_justify(self):
        self.assertEqual(justify("a b c", 7), "a  b  c")
        self.assertEqual(justify("ab c d", 8), "ab  c  d")
        self.assertEqual(justify("single", 10), "single")

    def test_slugify(self):
        self.assertEqual(slugify("Héllo, Wörld!"), "hello-world")
        self.assertEqual(slugify("  --  "), "")

    def test_indent_truncate(self):
        self.assertEqual(indent("a\n\nb"), "    a\n\n    b")
        self.assertEqual(truncate("abcdef", 5), "ab...")
        self.assertEqual(truncate("abc", 5), "abc")
        self.assertEqual(truncate("abcdef", 2), "..")


if __name__ == "__main__":
    unittest.main()

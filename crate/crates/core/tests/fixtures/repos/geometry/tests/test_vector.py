import math
import unittest

from geometry.vector import Vec2, angle_between, centroid, cross, dot


class VectorTest(unittest.TestCase):
    def test_arithmetic(self):
        self.assertEqual(Vec2(1, 2) + Vec2(3, 4), Vec2(4, 6))
        self.assertEqual(Vec2(1, 2) - Vec2(3, 4), Vec2(-2, -2))
        self.assertEqual(Vec2(1, 2) * 3, Vec2(3, 6))
        self.assertEqual(len({Vec2(1, 1), Vec2(1, 1)}), 1)
        self.assertEqual(repr(Vec2(1, 2)), "Vec2(1, 2)")

    def test_length_and_normalize(self):
        self.assertEqual(Vec2(3, 4).length(), 5)
        self.assertTrue(Vec2(3, 4).normalized().close_to(Vec2(0.6, 0.8)))
        with self.assertRaises(ZeroDivisionError):
            Vec2(0, 0).normalized()

    def test_products(self):
        self.assertEqual(dot(Vec2(1, 2), Vec2(3, 4)), 11)
        self.assertEqual(cross(Vec2(1, 0), Vec2(0, 1)), 1)
        self.assertAlmostEqual(angle_between(Vec2(1, 0), Vec2(0, 2)), math.pi / 2)
        with self.assertRaises(ValueError):
            angle_between(Vec2(0, 0), Vec2(1, 1))

    def test_rotation_and_centroid(self):
        self.assertTrue(Vec2(1, 0).rotated(math.pi / 2).close_to(Vec2(0, 1)))
        self.assertEqual(centroid([Vec2(0, 0), Vec2(2, 0), Vec2(2, 2), Vec2(0, 2)]), Vec2(1, 1))
        with self.assertRaises(ValueError):
            centroid([])


if __name__ == "__main__":
    unittest.main()

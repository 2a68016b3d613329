import math
import unittest

from geometry.shapes import Circle, Polygon, Rect
from geometry.vector import Vec2


class ShapesTest(unittest.TestCase):
    def test_circle(self):
        c = Circle(Vec2(0, 0), 2)
        self.assertAlmostEqual(c.area(), 4 * math.pi)
        self.assertAlmostEqual(c.perimeter(), 4 * math.pi)
        self.assertTrue(c.contains(Vec2(1, 1)))
        self.assertFalse(c.contains(Vec2(2, 1)))
        box = c.bounding_box()
        self.assertEqual((box.x, box.y, box.width, box.height), (-2, -2, 4, 4))
        with self.assertRaises(ValueError):
            Circle(Vec2(0, 0), -1)

    def test_rect(self):
        r = Rect(0, 0, 4, 3)
        self.assertEqual(r.area(), 12)
        self.assertEqual(r.perimeter(), 14)
        self.assertTrue(r.contains(Vec2(4, 3)))
        self.assertFalse(r.contains(Vec2(5, 1)))
        i = r.intersection(Rect(2, 1, 10, 10))
        self.assertEqual((i.x, i.y, i.width, i.height), (2, 1, 2, 2))
        self.assertIsNone(r.intersection(Rect(10, 10, 1, 1)))
        self.assertEqual(r.corners()[2], Vec2(4, 3))
        with self.assertRaises(ValueError):
            Rect(0, 0, -1, 1)

    def test_polygon(self):
        square = Polygon([Vec2(0, 0), Vec2(2, 0), Vec2(2, 2), Vec2(0, 2)])
        self.assertEqual(square.area(), 4)
        self.assertEqual(square.perimeter(), 8)
        self.assertFalse(square.is_clockwise())
        self.assertTrue(square.is_convex())
        dart = Polygon([Vec2(0, 0), Vec2(4, 0), Vec2(1, 1), Vec2(0, 4)])
        self.assertFalse(dart.is_convex())
        self.assertTrue(Polygon([Vec2(0, 0), Vec2(0, 1), Vec2(1, 0)]).is_clockwise())
        with self.assertRaises(ValueError):
            Polygon([Vec2(0, 0), Vec2(1, 1)])


if __name__ == "__main__":
    unittest.main()

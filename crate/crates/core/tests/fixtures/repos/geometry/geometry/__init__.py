from geometry.vector import Vec2, dot, cross, angle_between
from geometry.shapes import Circle, Polygon, Rect
from geometry.transform import Transform

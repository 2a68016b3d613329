import math


class Vec2:
    __slots__ = ("x", "y")

    def __init__(self, x, y):
        self.x = x
        self.y = y

    def __add__(self, other):
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k):
        return Vec2(self.x * k, self.y * k)

    def __eq__(self, other):
        return isinstance(other, Vec2) and self.x == other.x and self.y == other.y

    def __hash__(self):
        return hash((self.x, self.y))

    def __repr__(self):
        return f"Vec2({self.x}, {self.y})"

    def length(self):
        return math.hypot(self.x, self.y)

    def normalized(self):
        n = self.length()
        if n == 0:
            raise ZeroDivisionError("cannot normalize the zero vector")
        return Vec2(self.x / n, self.y / n)

    def rotated(self, radians):
        c = math.cos(radians)
        s = math.sin(radians)
        return Vec2(self.x * c - self.y * s, self.x * s + self.y * c)

    def close_to(self, other, eps=1e-9):
        return abs(self.x - other.x) <= eps and abs(self.y - other.y) <= eps


def dot(a, b):
    return a.x * b.x + a.y * b.y


def cross(a, b):
    return a.x * b.y - a.y * b.x


def angle_between(a, b):
    denom = a.length() * b.length()
    if denom == 0:
        raise ValueError("angle undefined for zero vectors")
    cosine = max(-1.0, min(1.0, dot(a, b) / denom))
    return math.acos(cosine)


def centroid(points):
    if not points:
        raise ValueError("no points")
    sx = sum(p.x for p in points)
    sy = sum(p.y for p in points)
    return Vec2(sx / len(points), sy / len(points))

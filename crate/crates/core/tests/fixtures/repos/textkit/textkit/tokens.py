import re

WORD = re.compile(r"[A-Za-z0-9']+")


def tokenize(text, lower=True):
    words = WORD.findall(text)
    if lower:
        words = [w.lower() for w in words]
    return words


def ngrams(tokens, n):
    if n <= 0:
        raise ValueError("n must be positive")
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def sentences(text):
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p for p in parts if p]


class Vocabulary:
    def __init__(self, unknown="<unk>"):
        self.unknown = unknown
        self.index = {unknown: 0}
        self.words = [unknown]

    def __len__(self):
        return len(self.words)

    def add(self, word):
        if word not in self.index:
            self.index[word] = len(self.words)
            self.words.append(word)
        return self.index[word]

    def extend(self, words):
        return [self.add(w) for w in words]

    def encode(self, words):
        return [self.index.get(w, 0) for w in words]

    def decode(self, ids):
        return [self.words[i] if 0 <= i < len(self.words) else self.unknown for i in ids]

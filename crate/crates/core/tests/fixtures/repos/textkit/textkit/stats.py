from collections import Counter

from textkit.tokens import tokenize


def word_frequencies(text):
    return Counter(tokenize(text))


def type_token_ratio(text):
    words = tokenize(text)
    if not words:
        return 0.0
    return len(set(words)) / len(words)


def top_words(text, count=3, stopwords=()):
    freq = word_frequencies(text)
    for word in stopwords:
        freq.pop(word, None)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:count]


def average_word_length(text):
    words = tokenize(text)
    if not words:
        return 0.0
    return sum(len(w) for w in words) / len(words)


def longest_word(text):
    best = ""
    for word in tokenize(text):
        if len(word) > len(best) or (len(word) == len(best) and word < best):
            best = word
    return best


class RunningStats:
    def __init__(self):
        self.count = 0
        self.total = 0
        self.smallest = None
        self.largest = None

    def push(self, value):
        self.count += 1
        self.total += value
        if self.smallest is None or value < self.smallest:
            self.smallest = value
        if self.largest is None or value > self.largest:
            self.largest = value

    def mean(self):
        if self.count == 0:
            raise ValueError("no values")
        return self.total / self.count

def count_words(lines):
    counts = {}
    for line in lines:
        for word in line.split():
            word = word.lower()
            if word in counts:
                counts[word] = counts[word] + 1
            else:
                counts[word] = 1
    return counts


def join_names(names):
    result = ""
    for name in names:
        result = result + name + ", "
    return result[:-2]


def unique_items(items):
    seen = []
    for item in items:
        if item not in seen:
            seen.append(item)
    return seen


def longest_common_prefix(words):
    if not words:
        return ""
    prefix = words[0]
    for word in words[1:]:
        while not word.startswith(prefix):
            prefix = prefix[:-1]
    return prefix

import math


def mean_and_std(values):
    total = 0
    for v in values:
        total += v
    mean = total / len(values)
    sq = 0
    for v in values:
        sq += (v - mean) ** 2
    return mean, math.sqrt(sq / len(values))


def pairwise_distances(points):
    out = []
    for i in range(len(points)):
        row = []
        for j in range(len(points)):
            dx = points[i][0] - points[j][0]
            dy = points[i][1] - points[j][1]
            row.append(math.sqrt(dx * dx + dy * dy))
        out.append(row)
    return out


def fib(n):
    if n < 2:
        return n
    return fib(n - 1) + fib(n - 2)


def primes_below(n):
    primes = []
    for k in range(2, n):
        is_prime = True
        for p in range(2, k):
            if k % p == 0:
                is_prime = False
        if is_prime:
            primes.append(k)
    return primes

"""Independent reference for the splitmix64 stream and the bounded-draw shuffle.

Regenerate with: python3 gen_golden.py
"""
M = (1 << 64) - 1


def splitmix64(seed):
    state = seed & M
    while True:
        state = (state + 0x9E3779B97F4A7C15) & M
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        yield z ^ (z >> 31)


def shuffle(n, seed):
    g = splitmix64(seed)
    xs = list(range(n))
    for i in range(n - 1, 0, -1):
        j = (next(g) * (i + 1)) >> 64
        xs[i], xs[j] = xs[j], xs[i]
    return xs


if __name__ == "__main__":
    with open("splitmix64_golden.txt", "w") as f:
        for seed in (0, 1, M):
            g = splitmix64(seed)
            f.write("seed %d\n" % seed)
            for _ in range(1000):
                f.write("%016x\n" % next(g))
    with open("shuffle_golden.txt", "w") as f:
        f.write(" ".join(str(x) for x in shuffle(10, 42)) + "\n")

# Regenerates mlp_forward.txt: tanh MLP forward pass in numpy.
import numpy as np

d, h, k = 8, 5, 3
n = h * d + h + k * h + k
p = 0.8 * np.sin(0.37 * np.arange(n) + 0.1)
w1 = p[: h * d].reshape(h, d)
b1 = p[h * d : h * d + h]
w2 = p[h * d + h : h * d + h + k * h].reshape(k, h)
b2 = p[h * d + h + k * h :]

with open("mlp_forward.txt", "w") as f:
    f.write(f"# dims {d} {h} {k}; params[i] = 0.8*sin(0.37*i + 0.1); x[j] = 2*cos(1.3*j + r)\n")
    for r in range(6):
        x = 2.0 * np.cos(1.3 * np.arange(d) + r)
        z = w2 @ np.tanh(w1 @ x + b1) + b2
        e = np.exp(z - z.max())
        probs = e / e.sum()
        f.write(" ".join(repr(float(v)) for v in probs) + "\n")

"""Scalar softmax oracle for the hand-sized attention examples.

Pure-Python, no tensor engine involved. The printed values are frozen into
tests/unit/test_relnet.cpp, tests/unit/test_pipeline.cpp and
tests/acceptance/acceptance.cpp.
"""
import math


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def gram(vectors):
    return [[sum(a * b for a, b in zip(u, v)) for v in vectors] for u in vectors]


def main():
    # Cross-instance: two instances, d=h=w=1, features {2, 0}, zero positions.
    feats = [[2.0], [0.0]]
    logits = gram(feats)
    att = [softmax(r) for r in logits]
    out0 = sum(att[0][j] * feats[j][0] for j in range(2)) + feats[0][0]
    out1 = sum(att[1][j] * feats[j][0] for j in range(2)) + feats[1][0]
    print("cim logits", logits)
    print("cim attention", ["%.10f" % v for r in att for v in r])
    print("cim output", "%.10f" % out0, "%.10f" % out1)

    # Cross-joint: K=2, h=w=1, identity projections, joint values {3, 1}.
    joints = [[3.0], [1.0]]
    logits = gram(joints)
    att = [softmax(r) for r in logits]
    outs = [sum(att[k][i] * joints[i][0] for i in range(2)) + joints[k][0] for k in range(2)]
    print("cjm logits", logits)
    print("cjm attention", ["%.10f" % v for r in att for v in r])
    print("cjm output", ["%.10f" % v for v in outs])

    # Focal loss, single positive with p = 0.5.
    print("focal p=0.5", "%.10f" % ((0.5 ** 2) * math.log(2.0)))


if __name__ == "__main__":
    main()

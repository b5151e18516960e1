"""Built-in verification suites: gradients, kernel oracle, EM identity."""

from __future__ import annotations

import numpy as np

from . import gradcheck
from . import losses as L
from . import oracles
from . import tensor as T
from .graph import Graph
from .kernels import gram_matrix, wl_kernel

GRAD_TOL = 1e-5
EM_TOL = 1e-9
PSD_TOL = -1e-9


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-1.5, 1.5, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def gradient_cases(rng):
    """``(name, build, inputs)`` triples; each ``build`` returns a scalar tensor."""
    n, d = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    R = rng.standard_normal((n, d))
    proj = lambda t: T.sum(T.mul(t, T.Tensor(R)))  # noqa: E731
    idx = rng.integers(0, n, size=n + 1)
    ns, nt, C = int(rng.integers(2, 5)), int(rng.integers(1, 4)), 2
    ys = rng.integers(0, C, size=ns)
    yt = rng.integers(0, C, size=nt)
    yn = rng.integers(0, C, size=n)
    return [
        ("matmul", lambda a, b: proj(T.matmul(a, b)), [rng.standard_normal((n, 3)), rng.standard_normal((3, d))]),
        ("add", lambda a, b: proj(T.add(a, b)), [rng.standard_normal((n, d)), rng.standard_normal((n, d))]),
        ("add_row", lambda a, b: proj(T.add(a, b)), [rng.standard_normal((n, d)), rng.standard_normal(d)]),
        ("sub", lambda a, b: proj(T.sub(a, b)), [rng.standard_normal((n, d)), rng.standard_normal((n, d))]),
        ("mul", lambda a, b: proj(T.mul(a, b)), [rng.standard_normal((n, d)), rng.standard_normal((n, d))]),
        ("row_scale", lambda a, s: proj(T.row_scale(a, s)), [rng.standard_normal((n, d)), rng.standard_normal((n, 1))]),
        ("relu", lambda a: proj(T.relu(a)), [_away_from_zero(rng, (n, d))]),
        ("tanh", lambda a: proj(T.tanh(a)), [rng.standard_normal((n, d))]),
        ("exp", lambda a: proj(T.exp(a)), [rng.standard_normal((n, d))]),
        ("log", lambda a: proj(T.log(a)), [rng.uniform(0.5, 2.0, (n, d))]),
        ("sum_axis0", lambda a: T.sum(T.mul(T.sum(a, axis=0), T.Tensor(R[0]))), [rng.standard_normal((n, d))]),
        ("sum_axis1", lambda a: T.sum(T.mul(T.sum(a, axis=1), T.Tensor(R[:, 0]))), [rng.standard_normal((n, d))]),
        ("mean", lambda a: T.mean(T.mul(a, a)), [rng.standard_normal((n, d))]),
        ("concat", lambda a, b: proj(T.concat([a, b])),
         [rng.standard_normal((n - 1, d)), rng.standard_normal((1, d))]),
        ("transpose", lambda a: proj(T.transpose(a)), [rng.standard_normal((d, n))]),
        ("row_l2_normalize", lambda a: proj(T.row_l2_normalize(a)), [rng.standard_normal((n, d))]),
        ("log_softmax", lambda a: proj(T.log_softmax(a)), [rng.standard_normal((n, d))]),
        ("logsumexp", lambda a: T.sum(T.mul(T.logsumexp(a), T.Tensor(R[:, 0]))), [rng.standard_normal((n, d))]),
        ("gather_rows", lambda a: T.sum(T.mul(T.gather_rows(a, idx), T.Tensor(np.ones((n + 1, d))))), [rng.standard_normal((n, d))]),
        ("scatter_add_rows", lambda a: proj(T.scatter_add_rows(a, idx, n)), [rng.standard_normal((n + 1, d))]),
        ("cross_branch", lambda a, b: L.cross_branch_loss(T.row_l2_normalize(a), T.row_l2_normalize(b)),
         [rng.standard_normal((n, d)), rng.standard_normal((n, d))]),
        ("cross_branch_target_only",
         lambda a, b: L.cross_branch_loss(T.row_l2_normalize(a), T.row_l2_normalize(b),
                                          L.ContrastiveConfig(0.5, L.TARGET_ONLY), num_source=1),
         [rng.standard_normal((n, d)), rng.standard_normal((n, d))]),
        ("cross_domain", lambda a, b: L.cross_domain_loss(T.row_l2_normalize(a), yt, T.row_l2_normalize(b), ys),
         [rng.standard_normal((nt, d)), rng.standard_normal((ns, d))]),
        ("supervised", lambda a: L.supervised_loss(a, yn), [rng.standard_normal((n, C))]),
        ("total", lambda a, b, c: T.add(T.add(
            L.cross_branch_loss(T.row_l2_normalize(a), T.row_l2_normalize(b)),
            L.cross_domain_loss(T.row_l2_normalize(T.gather_rows(a, [0])), yn[:1],
                                T.row_l2_normalize(b), yn)),
            L.supervised_loss(c, yn)),
         [rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, C))]),
    ]


def run_gradcheck(instances=20, seed=0, perturb=0.0):
    """Returns ``{case: (passed, total)}`` and the worst error seen."""
    rng = np.random.default_rng(seed)
    results, worst = {}, 0.0
    for _ in range(instances):
        for name, build, inputs in gradient_cases(rng):
            err = gradcheck.check(build, inputs, perturb=perturb)
            worst = max(worst, err)
            ok, tot = results.get(name, (0, 0))
            results[name] = (ok + (err < GRAD_TOL), tot + 1)
    return results, worst


def random_graph(rng, max_nodes=8, num_labels=3, p=0.4):
    n = int(rng.integers(1, max_nodes + 1))
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return Graph.from_edges(n, edges, node_labels=rng.integers(0, num_labels, size=n))


def run_kernel_oracle(pairs=50, seed=0):
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(pairs):
        g1, g2 = random_graph(rng), random_graph(rng)
        h = int(rng.integers(0, 3))
        passed += wl_kernel(g1, g2, h=h) == oracles.wl_kernel_explicit(
            g1, g1.node_labels, g2, g2.node_labels, h)
    psd = 0
    groups = 10
    for _ in range(groups):
        graphs = [random_graph(rng) for _ in range(8)]
        K = gram_matrix(graphs, h=int(rng.integers(0, 3)))
        psd += np.linalg.eigvalsh(K).min() >= PSD_TOL
    return {"kernel_equality": (passed, pairs), "gram_psd": (psd, groups)}


def random_em_batch(rng, d=None):
    d = d or int(rng.integers(2, 9))
    ns, nt, C = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(2, 4))
    return (_unit_rows(rng, nt, d), rng.integers(0, C, nt), _unit_rows(rng, ns, d), rng.integers(0, C, ns))


def run_em_identity(batches=100, seed=0):
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(batches):
        zt, yt, zs, ys = random_em_batch(rng)
        em = L.em_objective(zt, yt, zs, ys)
        cd = float(L.cross_domain_loss(zt, yt, zs, ys).data)
        passed += abs(em + cd) <= EM_TOL * max(1.0, abs(cd))
    return {"em_identity": (passed, batches)}


def run_all(perturb=0.0):
    grads, worst = run_gradcheck(perturb=perturb)
    report = {"gradcheck": grads}
    report["kernel"] = run_kernel_oracle()
    report["em"] = run_em_identity()
    ok = all(p == t for suite in report.values() for p, t in suite.values())
    return ok, report, worst


def report_dict(ok, report, worst):
    suites = {}
    for suite, cases in report.items():
        suites[suite] = {"passed": int(sum(p for p, _ in cases.values())),
                         "total": int(sum(t for _, t in cases.values()))}
    return {"ok": bool(ok), "worst_gradient_error": float(worst), "suites": suites}


def format_report(report):
    lines = []
    for suite, cases in report.items():
        passed = sum(p for p, _ in cases.values())
        total = sum(t for _, t in cases.values())
        lines.append(f"{suite}: {passed}/{total} passed")
        for name, (p, t) in cases.items():
            if p != t:
                lines.append(f"  FAIL {name}: {p}/{t}")
    return "\n".join(lines)


__all__ = ["run_all", "run_gradcheck", "run_kernel_oracle", "run_em_identity", "format_report", "report_dict"]

"""Foundation smoke test run before the model modules exist.

Loads voroflow submodules directly so the package __init__ (which imports
dequant and mixture) is bypassed.
"""
import importlib.util
import sys
import types

import numpy as np

PKGDIR = "/root/pkg/src/voroflow"
pkg = types.ModuleType("voroflow")
pkg.__path__ = [PKGDIR]
sys.modules["voroflow"] = pkg


def load(name):
    spec = importlib.util.spec_from_file_location(f"voroflow.{name}", f"{PKGDIR}/{name}.py")
    mod = importlib.util.module_from_spec(spec)
    sys.modules[f"voroflow.{name}"] = mod
    spec.loader.exec_module(mod)
    return mod


errors = load("errors")
ad = load("autodiff")
tes = load("tessellation")
cm = load("cell_map")
fl = load("flows")
opt = load("optim")
data = load("data")

ok = 0


def check(name, cond, detail=""):
    global ok
    if not cond:
        print(f"FAIL {name}  {detail}")
        sys.exit(1)
    print(f"ok   {name}")
    ok += 1


# --- autodiff ---
t = ad.Tape()
x = t.var(np.array([1.0, 2.0, 3.0]))
y = ad.vsum(ad.exp(x) * x)
g = t.backward(y)
expect = np.exp([1.0, 2.0, 3.0]) * (1.0 + np.array([1.0, 2.0, 3.0]))
check("autodiff.exp_mul_grad", np.allclose(g[x], expect))


def f_quad(tape, vs):
    a, b = vs
    return ad.vsum(ad.matvec(a, b) * ad.matvec(a, b)) + ad.vsum(ad.softplus(b))


rng = np.random.default_rng(0)
err = ad.grad_check(f_quad, [rng.standard_normal((3, 4)), rng.standard_normal(4)])
check("autodiff.grad_check", err < 1e-6, f"max err {err}")

t = ad.Tape()
a = t.var(np.array([[1.0, -2.0], [3.0, 4.0]]))
v, idx = ad.select_min_positive(a, np.array([[True, True], [True, True]]))
check("autodiff.select_min_positive", np.allclose(v.value, [1.0, 3.0]) and list(idx) == [0, 0])
g = t.backward(ad.vsum(v * v))
check("autodiff.select_min_positive_grad", np.allclose(g[a], [[2.0, 0.0], [6.0, 0.0]]))

t = ad.Tape()
a = t.var(np.array([[1.0, 2.0], [3.0, 4.0]]))
p = ad.pick(a, np.array([1, 0]))
g = t.backward(ad.vsum(p))
check("autodiff.pick", np.allclose(p.value, [2.0, 3.0]) and np.allclose(g[a], [[0, 1], [1, 0]]))

t = ad.Tape()
a = t.var(np.array([-1.0, 2.0]))
ls = ad.logsumexp(a, axis=0)
check("autodiff.logsumexp", np.allclose(ls.value, np.logaddexp(-1.0, 2.0)))

# --- tessellation: 1D two-anchor worked example ---
tess = tes.new_tessellation(np.array([[0.0], [2.0]]), np.array([-10.0]), np.array([10.0]))
check("tess.locate", tes.locate(tess, np.array([0.5])) == 0 and tes.locate(tess, np.array([1.5])) == 1)
check("tess.tie_first_index", tes.locate(tess, np.array([1.0])) == 0)
check("tess.contains", tes.contains(tess, 0, np.array([0.5])) and not tes.contains(tess, 0, np.array([1.0])))
cons = tes.cell_constraints(tess, 0)
check("tess.constraints", len(cons) == 3 and np.allclose(cons[0].normal, [4.0]) and cons[0].offset == 4.0)

# --- cell_map frozen example ---
res = cm.forward(tess, 0, np.array([0.5]))
check("cell_map.forward_point", np.allclose(res.point, [1.0 / 3.0]), str(res.point))
check("cell_map.forward_logdet", abs(res.logdet - 2.0 * np.log(2.0 / 3.0)) < 1e-12, str(res.logdet))
check("cell_map.lambda_star", abs(res.lambda_star - 1.0) < 1e-12)
jac = cm.dense_jacobian_reference(tess, 0, np.array([0.5]))
check("cell_map.jacobian", np.allclose(jac, [[4.0 / 9.0]]), str(jac))

rexit = cm.ray_exit(tess, 0, np.array([-1.0]))
check("cell_map.ray_box", abs(rexit.lambda_star - 10.0) < 1e-12 and
      rexit.active.kind == tes.HalfSpaceKind.BOX_LOWER and rexit.active.index == 0)

inv = cm.inverse(tess, 0, res.point)
check("cell_map.inverse_roundtrip", np.allclose(inv.point, [0.5]) and
      abs(inv.logdet + res.logdet) < 1e-12)

# FD jacobian at the same x
h = 1e-6
fd = (cm.forward(tess, 0, np.array([0.5 + h])).point - cm.forward(tess, 0, np.array([0.5 - h])).point) / (2 * h)
check("cell_map.jacobian_fd", abs(fd[0] - 4.0 / 9.0) < 1e-6, str(fd))

# 2D roundtrip + logdet vs dense jacobian at a few random points
rng = np.random.default_rng(1)
anchors = rng.standard_normal((5, 2))
tess2 = tes.new_tessellation(anchors, np.array([-4.0, -4.0]), np.array([4.0, 4.0]))
worst = 0.0
for _ in range(50):
    x = rng.uniform(-3.9, 3.9, 2)
    k = tes.locate(tess2, x)
    r = cm.forward(tess2, k, x)
    j = cm.dense_jacobian_reference(tess2, k, x)
    s, ld = np.linalg.slogdet(j)
    worst = max(worst, abs(ld - r.logdet))
    i = cm.inverse(tess2, k, r.point)
    worst = max(worst, float(np.max(np.abs(i.point - x))))
check("cell_map.2d_logdet_and_roundtrip", worst < 1e-9, f"worst {worst}")

# gradient of batched forward map w.r.t. anchors and log-scales via graph
def ld_graph(tape, vs):
    anc, sc = vs
    lo = tape.const(np.array([-4.0, -4.0]))
    hi = tape.const(np.array([4.0, 4.0]))
    xs = np.array([[0.5, 0.5], [-1.0, 2.0], [0.3, -0.2]])
    ks = tes.locate_many(tess2, xs)
    out = cm.forward_graph(anc, lo, hi, sc, ks, tape.const(xs))
    return ad.vsum(out.logdet) + ad.vsum(out.point)


err = ad.grad_check(ld_graph, [anchors.copy(), np.full(5, 1.2)], step=1e-6)
check("cell_map.graph_grads", err < 1e-5, f"err {err}")

# --- flows ---
t = ad.Tape()
bind = ad.Binding(t)
chain = fl.CouplingChain("c", 4, 4, hidden=16, rng=np.random.default_rng(2))
x = rng.standard_normal((6, 4))
y, ld = chain.forward(bind, t.var(x))
check("flows.identity_init", np.allclose(y.value, x) and np.allclose(ld.value, 0.0))
for p in chain.parameters():
    p.value = p.value + 0.05 * np.random.default_rng(3).standard_normal(p.value.shape)
t = ad.Tape()
bind = ad.Binding(t)
y, ld = chain.forward(bind, t.var(x))
xb, ldi = chain.inverse(bind, t.var(y.value))
check("flows.roundtrip", np.max(np.abs(xb.value - x)) < 1e-10 and np.max(np.abs(ld.value + ldi.value)) < 1e-10)

stack = fl.FlowStack("s", 2, 2, hidden=8, rng=np.random.default_rng(4))
t = ad.Tape()
bind = ad.Binding(t)
lp = stack.logprob(bind, t.var(rng.standard_normal((5, 2))))
check("flows.stack_logprob_shape", lp.value.shape == (5,))
samp = stack.sample(7, np.random.default_rng(5))
check("flows.stack_sample", samp.shape == (7, 2))

# fit a tiny model: mean of data under gaussian
mu = ad.Param("mu", np.zeros(2))
target = np.array([1.5, -0.5])
dat = target + 0.01 * rng.standard_normal((64, 2))


def batch_loss(idx, rng_):
    tape = ad.Tape()
    b = ad.Binding(tape)
    m = b[mu]
    d = tape.const(dat[idx])
    return ad.vsum((d - ad.broadcast_to(ad.reshape(m, (1, 2)), d.shape)) ** 2) / len(idx), b


def val_score():
    tape = ad.Tape(record=False)
    b = ad.Binding(tape)
    m = b[mu]
    d = tape.const(dat)
    return float(ad.vsum((d - ad.broadcast_to(ad.reshape(m, (1, 2)), d.shape)) ** 2).value) / len(dat)


rep = opt.fit([mu], batch_loss, val_score, n_train=64, batch_size=16, epochs=40, lr=0.05, seed=0)
check("optim.fit", np.allclose(mu.value, target, atol=0.02), str(mu.value))
check("optim.report", rep.best_epoch >= 0 and len(rep.epochs) <= 40)

# --- data ---
nursery = data.make_nursery()
check("data.nursery_shape", nursery.n_rows == 12960 and nursery.cardinalities == (3, 5, 4, 4, 3, 2, 3, 3))
check("data.nursery_unique", len({tuple(r) for r in nursery.codes}) == 12960)
sp = data.split(nursery, (0.8, 0.1, 0.1), seed=0)
check("data.split_sizes", (len(sp.train), len(sp.val), len(sp.test)) == (10368, 1296, 1296))
check("data.split_disjoint", len(set(sp.train) | set(sp.val) | set(sp.test)) == 12960)
cb = data.synth_continuous_2d("checkerboard", 1000, seed=0)
check("data.checkerboard_range", cb.min() >= -2.0 and cb.max() <= 2.0)
occupied = ((cb + 2.0) // 0.5).astype(int)
check("data.checkerboard_parity", np.all((occupied.sum(axis=1)) % 2 == 0))
gm = data.gaussian_mixture_2d("two_gaussians")
xs = gm.sample(2000, np.random.default_rng(6))
check("data.gm_logpdf", np.isfinite(gm.logpdf(xs)).all())
q = data.synth_quantized_2d("two_gaussians", 91, 4000, seed=0)
check("data.quantized", q.codes.max() == 90 and q.codes.min() == 0)

print(f"\nall {ok} smoke checks passed")

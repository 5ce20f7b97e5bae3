"""Central finite-difference check of the analytic gradient, shared by the unit and acceptance tests."""

import numpy as np

from handeye import net as N

STEP = 1e-5


def small_problem(seed=3):
    net = N.build_network(N.ArchConfig(image_size=16), seed=seed)
    rng = np.random.default_rng(0)
    batch = N.TrainBatch(rng.random((4, 16, 16, 1)), rng.random((4, 16, 16, 1)),
                         rng.normal(size=(4, 5)) * 0.1, np.array([0.0, 1.0, 1.0, 0.0]))
    return net, batch


def _owner(net):
    """Index of the layer owning each parameter block."""
    out = {}
    for i, layer in enumerate(net.layers):
        for k in net.params:
            if k.startswith(layer.name + ".") and layer.name:
                out[k] = i
    return out


def block_errors(net, batch):
    """Per-block max |analytic - numeric| / max(|analytic|, |numeric|)."""
    _, grads = N.loss_and_grad(net, batch)
    x = N._stack(net, batch.images_pregrasp, batch.images_current)
    v, y = batch.commands, np.asarray(batch.labels, dtype=np.float64)
    # inputs to every layer at the unperturbed parameters (train-mode batch norm)
    acts = [x]
    for i in range(len(net.layers)):
        acts.append(N._run(net, acts[-1], v, True, start=i, stop=i + 1))

    def loss_from(i):
        z = N._run(net, acts[i], v, True, start=i)
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    owner = _owner(net)
    errors = {}
    for name, arr in net.params.items():
        if N.is_running_stat(name):
            continue
        start = owner[name]
        flat = arr.reshape(-1)
        num = np.empty(flat.size)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + STEP
            lp = loss_from(start)
            flat[j] = old - STEP
            lm = loss_from(start)
            flat[j] = old
            num[j] = (lp - lm) / (2 * STEP)
        a = grads[name].reshape(-1)
        scale = max(np.abs(a).max(), np.abs(num).max(), 1e-12)
        errors[name] = float(np.abs(a - num).max() / scale)
    return errors

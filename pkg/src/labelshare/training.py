"""Training modes, the incremental-learning schedule, and prediction.

Four modes share one loop:

  individual      one model per task, C = n_i + 1, task-local masks
  multichannel    one model, C = sum(n_i) + 1, disjoint channel blocks
  label_sharing   one model, C = n_star + 1, masks remapped to shared labels
  label_sharing_il  label_sharing base plus the two-phase task addition

For label_sharing / multichannel, channels a sample's task cannot supervise
are by default excluded from the loss (missing_channel_policy
"exclude_from_loss"); "treat_as_background" keeps them in with an all-zero
target instead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import net
from .data import SHARED, TASK_LOCAL
from .errors import (
    DomainMismatch,
    EmptyDataset,
    FingerprintMismatch,
    InvalidConfig,
    ShapeError,
    TaskTooLarge,
    UnknownTask,
)
from .labelspace import inverse_map, structure_fingerprint
from .losses import soft_dice_loss

MODES = ("individual", "multichannel", "label_sharing", "label_sharing_il")

# training arithmetic runs in float32 for speed; checkpoints persist float64
TRAIN_DTYPE = np.float32
EXCLUDE_FROM_LOSS = "exclude_from_loss"
TREAT_AS_BACKGROUND = "treat_as_background"


@dataclass
class TrainConfig:
    mode: str = "label_sharing"
    epochs: int = 100
    il_finetune_epochs: int = 30
    il_combined_epochs: int = 70
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    missing_channel_policy: str = EXCLUDE_FROM_LOSS
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if min(self.epochs, self.il_finetune_epochs, self.il_combined_epochs) < 0:
            raise InvalidConfig("epoch counts must be >= 0")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.missing_channel_policy not in (EXCLUDE_FROM_LOSS, TREAT_AS_BACKGROUND):
            raise InvalidConfig(
                f"unknown missing_channel_policy {self.missing_channel_policy!r}"
            )


@dataclass
class Checkpoint:
    config: net.ModelConfig
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)  # {"phase","epoch","loss"}
    space_fingerprint: str = ""
    mode: str = "individual"
    channel_blocks: dict = field(default_factory=dict)

    def model(self):
        return net.Model(self.config, self.params)


def standardize_image(image):
    """Per-image zero mean, unit variance (constant images become zeros)."""
    image = np.asarray(image, dtype=float)
    std = image.std()
    return (image - image.mean()) / (std if std > 0 else 1.0)


def _one_hot(mask, n_channels):
    if mask.max(initial=0) >= n_channels:
        raise ShapeError(
            f"mask label {int(mask.max())} >= out_channels {n_channels}"
        )
    return np.eye(n_channels)[mask].transpose(2, 0, 1)


def _channel_mask(mode, policy, n_channels, task_id, space, channel_blocks):
    mask = np.ones(n_channels, dtype=bool)
    if mode == "individual" or policy == TREAT_AS_BACKGROUND:
        return mask
    mask[:] = False
    mask[0] = True
    if mode in ("label_sharing", "label_sharing_il"):
        for shared in space.task_map(task_id).values():
            mask[shared] = True
    elif mode == "multichannel":
        try:
            start, end = channel_blocks[task_id]
        except KeyError:
            raise UnknownTask(f"task {task_id!r} has no channel block") from None
        mask[start : end + 1] = True
    return mask


def _load_training_set(manifest, model_config, train_config, space, channel_blocks):
    samples = []
    for entry in manifest.entries:
        s = manifest.load(entry)
        image = standardize_image(s.image)[None, :, :].astype(TRAIN_DTYPE)
        target = _one_hot(s.mask, model_config.out_channels).astype(TRAIN_DTYPE)
        cmask = _channel_mask(
            train_config.mode,
            train_config.missing_channel_policy,
            model_config.out_channels,
            s.task_id,
            space,
            channel_blocks,
        )
        samples.append((image, target, cmask))
    if not samples:
        raise EmptyDataset("training manifest has no entries")
    return samples


def _run_epochs(model, samples, cfg, state, phase, n_epochs):
    """Mini-batch Adam over shuffled samples; appends per-epoch mean loss."""
    n = len(samples)
    images = np.stack([s[0] for s in samples])
    targets = np.stack([s[1] for s in samples])
    cmasks = np.stack([s[2] for s in samples])
    for _ in range(n_epochs):
        rng = np.random.default_rng([cfg.seed & (2**64 - 1), state["epoch"]])
        perm = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            sel = perm[lo : lo + cfg.batch_size]
            probs = model.forward(images[sel])
            loss, dprobs = soft_dice_loss(probs, targets[sel], cmasks[sel])
            grads = model.backward(dprobs)
            _adam_step(model.params, grads, cfg, state)
            loss_sum += loss * len(sel)
        state["epoch"] += 1
        state["history"].append(
            {"phase": phase, "epoch": state["epoch"], "loss": loss_sum / n}
        )


def _adam_step(params, grads, cfg, state):
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name] = cfg.beta1 * state["m"][name] + (1 - cfg.beta1) * g
        v = state["v"][name] = cfg.beta2 * state["v"][name] + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1**t)
        vhat = v / (1 - cfg.beta2**t)
        p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_epsilon)


def _check_domain(mode, manifest):
    if mode in ("label_sharing", "label_sharing_il") and manifest.label_domain != SHARED:
        raise DomainMismatch(
            f"mode {mode!r} needs a shared-domain manifest, got {manifest.label_domain!r}"
        )
    if mode == "multichannel" and not manifest.channel_blocks:
        raise DomainMismatch("multichannel mode needs a manifest with channel_blocks")
    if mode == "individual" and manifest.label_domain != TASK_LOCAL:
        raise DomainMismatch("individual mode needs a task-local manifest")


def train(train_config, model_config, manifest, space=None):
    """Train from scratch; returns a Checkpoint with per-epoch loss history."""
    train_config.validate()
    model_config.validate()
    _check_domain(train_config.mode, manifest)
    if train_config.mode in ("label_sharing", "label_sharing_il") and space is None:
        raise DomainMismatch("label sharing modes need the shared label space")

    model = net.Model(model_config)
    model.params = {k: v.astype(TRAIN_DTYPE) for k, v in model.params.items()}
    state = _fresh_state(model)
    samples = _load_training_set(
        manifest, model_config, train_config, space, manifest.channel_blocks
    )
    _run_epochs(model, samples, train_config, state, "train", train_config.epochs)
    return Checkpoint(
        config=model_config,
        params=model.params,
        adam_m=state["m"],
        adam_v=state["v"],
        adam_t=state["t"],
        epoch=state["epoch"],
        history=state["history"],
        space_fingerprint=structure_fingerprint(space) if space is not None else "",
        mode=train_config.mode,
        channel_blocks=dict(manifest.channel_blocks),
    )


def _fresh_state(model):
    return {
        "m": {k: np.zeros_like(v) for k, v in model.params.items()},
        "v": {k: np.zeros_like(v) for k, v in model.params.items()},
        "t": 0,
        "epoch": 0,
        "history": [],
    }


def train_incremental(
    base, new_manifest, old_manifest, space_after, train_config, pre_space=None
):
    """Two-phase task addition: fine-tune on the new task, then retrain on
    the union of old and new data. The architecture is untouched, so the new
    task must fit the existing head (n_new <= n_star)."""
    train_config.validate()
    if pre_space is not None:
        expect = structure_fingerprint(pre_space)
        if base.space_fingerprint != expect:
            raise FingerprintMismatch(
                f"checkpoint was trained against space {base.space_fingerprint[:12]}, "
                f"given pre-addition space {expect[:12]}"
            )
    if space_after.n_star + 1 != base.config.out_channels:
        raise TaskTooLarge(
            "post-addition", space_after.n_star, base.config.out_channels - 1
        )
    _check_domain("label_sharing", new_manifest)
    _check_domain("label_sharing", old_manifest)

    model = net.Model(
        base.config, {k: v.astype(TRAIN_DTYPE) for k, v in base.params.items()}
    )
    state = {
        "m": {k: v.astype(TRAIN_DTYPE) for k, v in base.adam_m.items()},
        "v": {k: v.astype(TRAIN_DTYPE) for k, v in base.adam_v.items()},
        "t": base.adam_t,
        "epoch": base.epoch,
        "history": list(base.history),
    }
    new_samples = _load_training_set(
        new_manifest, base.config, train_config, space_after, {}
    )
    old_samples = _load_training_set(
        old_manifest, base.config, train_config, space_after, {}
    )
    _run_epochs(
        model, new_samples, train_config, state, "il_finetune",
        train_config.il_finetune_epochs,
    )
    _run_epochs(
        model, old_samples + new_samples, train_config, state, "il_combined",
        train_config.il_combined_epochs,
    )
    return Checkpoint(
        config=base.config,
        params=model.params,
        adam_m=state["m"],
        adam_v=state["v"],
        adam_t=state["t"],
        epoch=state["epoch"],
        history=state["history"],
        space_fingerprint=structure_fingerprint(space_after),
        mode="label_sharing_il",
        channel_blocks={},
    )


def predict(model, image, space=None, task_id=None, relabel=None):
    """Argmax segmentation of one image.

    The forward pass sees only the image. If task_id (with space) or an
    explicit relabel map is given, predicted channels are relabeled
    post hoc; channels with no entry map to background.
    """
    image = standardize_image(image)
    probs = model.forward(image[None, None, :, :])
    pred = probs[0].argmax(axis=0)  # ties: lowest channel index
    if relabel is None and task_id is not None:
        if space is None:
            raise UnknownTask("task-local prediction needs the shared space")
        relabel = inverse_map(space, task_id)
    if relabel is not None:
        lut = np.zeros(model.config.out_channels, dtype=np.int64)
        for src, dst in relabel.items():
            lut[src] = dst
        pred = lut[pred]
    return pred

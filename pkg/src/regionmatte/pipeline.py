"""Training, inference and evaluation for the two-stage matting model."""

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import ops
from .checkpoint import Checkpoint, save_checkpoint
from .config import PipelineConfig
from .data import CompositeSample, augment, make_synthetic_samples, resize
from .errors import CheckpointError, ImageFormatError, UnpairedFileError
from .imageio import list_images, read_image
from .losses import downsample_alpha, make_pseudo_trimap, total_loss
from .lowres import MIN_INPUT_SIZE, LowResNet, normalize
from .metrics import MetricReport, evaluate_matte
from .nn import Adam, Module
from .refine import RefineNet
from .regions import REGION, UNCERTAIN, build_region_set, paste_regions, select_uncertain
from .tensor import Tensor, no_grad
from .workers import parallel_map, thread_limit

log = logging.getLogger("regionmatte")

OUTPUT_STRIDE = 32


class MattingModel(Module):
    def __init__(self, config, seed=0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        self.lowres = LowResNet(config.backbone, rng)
        self.refine = RefineNet(config.refine, rng)

    @classmethod
    def from_checkpoint(cls, ckpt):
        try:
            config = PipelineConfig.from_dict(ckpt.config)
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"checkpoint config is not usable: {exc}") from exc
        model = cls(config)
        try:
            model.load_state_dict(ckpt.weights)
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"checkpoint does not match its config: {exc}") from exc
        return model

    def forward(self, images, regions=None, search="kdtree"):
        """Run both stages on (N, H, W, 3) images in [0, 1].

        ``regions`` gives per-image (n_i, 2) grid coordinates, or is a callable
        mapping the coarse output to them; by default they are selected from
        the predicted trimap. Returns ``(coarse, upsampled
        coarse alpha (N, H, W), final alpha (N, H, W), region sets)``.
        """
        images = np.asarray(images, dtype=np.float32)
        n, h, w, _ = images.shape
        coarse = self.lowres(Tensor(normalize(images, self.config.backbone)))
        up = ops.bilinear_upsample(ops.reshape(coarse.alpha, coarse.alpha.shape + (1,)), (h, w))
        if callable(regions):
            regions = regions(coarse)
        elif regions is None:
            cap = self.config.refine.max_regions
            regions = [np.array(select_uncertain(coarse.trimap.data[b], cap), np.int64).reshape(-1, 2)
                       for b in range(n)]
        cfg = self.config.refine
        sets, crops, knns, slots = [], [], [], []
        offset = 0
        for b in range(n):
            rgba = ops.concat([Tensor(images[b]), up[b]], axis=-1)
            rs = build_region_set(rgba, regions[b], cfg.k, cfg.s, search)
            rs.image_index = np.full(len(rs), b, np.int64)
            sets.append(rs)
            if len(rs) == 0:
                continue
            crops.append(rs.crops)
            knns.append(_pad_knn(rs.knn, cfg.k, len(rs)) + offset)
            slots.append(_pad_slots(rs.slots, cfg.k, cfg.s))
            offset += len(rs)
        base = ops.reshape(up, (n, h, w))
        if not crops:
            return coarse, base, base, sets
        refined = self.refine(ops.concat(crops, axis=0), np.concatenate(knns), np.concatenate(slots))
        outs = []
        start = 0
        for b, rs in enumerate(sets):
            part = refined[start:start + len(rs)]
            start += len(rs)
            pasted = paste_regions(base[b], rs.coords, part) if len(rs) else base[b]
            outs.append(ops.reshape(pasted, (1, h, w)))
        return coarse, base, ops.concat(outs, axis=0), sets


def _pad_knn(knn, k, n):
    """Images with fewer than k+1 regions repeat their own index (the self slot) to fill k columns."""
    if knn.shape[1] == k:
        return knn
    fill = np.repeat(np.arange(n)[:, None], k - knn.shape[1], axis=1)
    return np.concatenate([knn, fill], axis=1)


def _pad_slots(slots, k, s):
    if slots.shape[1] == k + 1:
        return slots
    center = (s - 1) * (2 * s - 1) + (s - 1)
    fill = np.full((len(slots), k + 1 - slots.shape[1]), center, np.int64)
    return np.concatenate([slots, fill], axis=1)


def training_regions(target_uncertain, trimap_probs, cap):
    """Union of ground-truth and predicted uncertain cells, capped (ground truth first)."""
    probs = np.asarray(trimap_probs)
    predicted = probs[..., UNCERTAIN] >= probs[..., :UNCERTAIN].max(axis=-1)
    chosen = target_uncertain | predicted
    rows, cols = np.nonzero(chosen)
    if len(rows) > cap:
        score = target_uncertain[rows, cols] * 2.0 + probs[rows, cols, UNCERTAIN]
        keep = np.sort(np.argsort(-score, kind="stable")[:cap])
        rows, cols = rows[keep], cols[keep]
    return np.stack([rows, cols], axis=1).astype(np.int64)


@dataclass
class Targets:
    alpha: np.ndarray       # (N, H, W)
    fg: np.ndarray
    bg: np.ndarray
    coarse: dict            # level -> (alpha (N, h, w), TrimapTarget)


def make_targets(samples, loss_cfg, levels=(8, 16, 32)):
    alpha = np.stack([s.alpha for s in samples]).astype(np.float32)
    trimaps = make_pseudo_trimap(alpha, loss_cfg, levels)
    coarse = {lv: (downsample_alpha(alpha, lv), trimaps[lv]) for lv in levels}
    return Targets(alpha, np.stack([s.foreground for s in samples]), np.stack([s.background for s in samples]), coarse)


def load_samples(config):
    """Training samples from ``io.data_dir`` or the synthetic generator, resized to ``train.resize``."""
    size = config.train.resize
    if not config.io.data_dir:
        return make_synthetic_samples(config.train.num_samples, size, seed=config.train.seed)
    root = config.io.data_dir
    images = list_images(os.path.join(root, "images"))
    alphas = list_images(os.path.join(root, "alphas"))
    _check_pairs(images, alphas)
    fgs = list_images(os.path.join(root, "fg")) if os.path.isdir(os.path.join(root, "fg")) else {}
    bgs = list_images(os.path.join(root, "bg")) if os.path.isdir(os.path.join(root, "bg")) else {}
    samples = []
    for stem in images:
        image = resize(_rgb(read_image(images[stem])), (size, size))
        alpha = np.clip(resize(_gray(read_image(alphas[stem])), (size, size)), 0, 1)
        if stem in fgs and stem in bgs:
            fg = resize(_rgb(read_image(fgs[stem])), (size, size))
            bg = resize(_rgb(read_image(bgs[stem])), (size, size))
            samples.append(CompositeSample(None, fg, bg, alpha).recomposite())
        else:
            # unknown F and B: F = B = I keeps the matting equation and makes the composition term constant
            samples.append(CompositeSample(image, image, image, alpha))
    return samples


def _rgb(arr):
    return np.repeat(arr[..., None], 3, axis=-1) if arr.ndim == 2 else arr


def _gray(arr):
    return arr.mean(axis=-1) if arr.ndim == 3 else arr


def _check_pairs(a, b):
    missing = sorted(set(a) ^ set(b))
    if missing:
        raise UnpairedFileError(f"files without a partner: {missing}")


class Trainer:
    """Sequential training loop; every step's component losses land in ``history``."""

    def __init__(self, config, samples=None):
        self.config = config.validate()
        tc = config.train
        self.model = MattingModel(config, seed=tc.seed)
        scale = {name: tc.refine_lr_scale for name, _ in self.model.named_parameters() if name.startswith("refine.")}
        self.optimizer = Adam(self.model.named_parameters(), lr=tc.learning_rate, lr_scale=scale)
        self.samples = load_samples(config) if samples is None else list(samples)
        self.history = []
        self.step_count = 0
        self._fixed_targets = None if tc.augment else make_targets(self.samples, config.loss)

    def _batch(self, step):
        tc = self.config.train
        n = len(self.samples)
        if tc.batch >= n:
            idx = np.arange(n)
        else:
            epoch, pos = divmod(step * tc.batch, n)
            order = np.random.default_rng([tc.seed, epoch]).permutation(n)
            idx = np.concatenate([order, np.random.default_rng([tc.seed, epoch + 1]).permutation(n)])[pos:pos + tc.batch]
        if not tc.augment:
            if len(idx) == n and self._fixed_targets is not None:
                return [self.samples[i] for i in idx], self._fixed_targets
            batch = [self.samples[i] for i in idx]
            return batch, make_targets(batch, self.config.loss)
        batch = parallel_map(lambda i: augment(self.samples[i], seed=[tc.seed, step, int(i)]), idx)
        return batch, make_targets(batch, self.config.loss)

    def step(self):
        batch, targets = self._batch(self.step_count)
        images = np.stack([s.image for s in batch])
        model = self.model
        cap = self.config.refine.max_regions
        gt_uncertain = targets.coarse[8][1].uncertain

        def regions(coarse):
            # pseudo ground-truth uncertain cells plus the model's own picks
            return [training_regions(gt_uncertain[b], coarse.trimap.data[b], cap) for b in range(len(batch))]

        self.optimizer.zero_grad()
        coarse, _, alpha, sets = model(images, regions=regions, search="bruteforce")
        loss, parts = total_loss(coarse, targets.coarse, alpha, targets.alpha, self.config.loss,
                                 fg=targets.fg, bg=targets.bg)
        loss.backward()
        self.optimizer.lr = self.learning_rate(self.step_count)
        self.optimizer.step()
        self.step_count += 1
        parts["regions"] = int(sum(len(r) for r in sets))
        self.history.append(parts)
        tc = self.config.train
        if tc.log_every and self.step_count % tc.log_every == 0:
            log.info("step %d %s", self.step_count, " ".join(f"{k}={v:.5g}" for k, v in parts.items()))
        if tc.checkpoint_every and self.config.io.checkpoint_dir and self.step_count % tc.checkpoint_every == 0:
            os.makedirs(self.config.io.checkpoint_dir, exist_ok=True)
            save_checkpoint(self.checkpoint(), os.path.join(self.config.io.checkpoint_dir, f"step_{self.step_count:06d}.mtlt"))
        return parts

    def learning_rate(self, step):
        tc = self.config.train
        if tc.lr_schedule == "cosine" and tc.steps > 0:
            return tc.learning_rate * 0.5 * (1.0 + math.cos(math.pi * min(step, tc.steps) / tc.steps))
        return tc.learning_rate

    def run(self, steps=None):
        steps = self.config.train.steps if steps is None else steps
        with thread_limit():
            for _ in range(steps):
                self.step()
        return self.history

    def checkpoint(self, include_optimizer=True):
        weights = {name: p.data.astype(np.float32) for name, p in self.model.named_parameters()}
        opt = self.optimizer.state_dict() if include_optimizer else None
        return Checkpoint(config=self.config.to_dict(), weights=weights, optimizer=opt,
                          meta={"step": self.step_count})


def train(config, samples=None):
    """Train from scratch for ``config.train.steps`` steps and return the final checkpoint."""
    trainer = Trainer(config, samples)
    trainer.run()
    return trainer.checkpoint()


@dataclass
class InferenceResult:
    alpha: np.ndarray           # (H, W) final matte
    coarse_alpha: np.ndarray    # (H, W) upsampled coarse matte
    trimap: np.ndarray          # (ceil(H/8), ceil(W/8), 3) class probabilities
    regions: object             # RegionSet in padded-grid coordinates
    meta: dict


def inference_dims(h, w):
    """Smallest size >= (h, w) that is a multiple of the output stride and at least 224."""
    return (max(math.ceil(h / OUTPUT_STRIDE) * OUTPUT_STRIDE, MIN_INPUT_SIZE),
            max(math.ceil(w / OUTPUT_STRIDE) * OUTPUT_STRIDE, MIN_INPUT_SIZE))


def pad_for_inference(image):
    """Edge-pad at the bottom/right to :func:`inference_dims`."""
    h, w = image.shape[:2]
    ph, pw = inference_dims(h, w)
    padded = np.pad(image, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    return padded, {"source_dims": [h, w], "padded_dims": [ph, pw], "multiple": OUTPUT_STRIDE}


def _as_model(model_or_ckpt):
    if isinstance(model_or_ckpt, MattingModel):
        return model_or_ckpt
    if isinstance(model_or_ckpt, Checkpoint):
        return MattingModel.from_checkpoint(model_or_ckpt)
    raise TypeError("expected a MattingModel or a Checkpoint")


def infer(image, model):
    """Alpha matte for one RGB image (H, W, 3) in [0, 1]."""
    model = _as_model(model)
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ImageFormatError(f"expected an RGB image (H, W, 3), got shape {image.shape}")
    h, w = image.shape[:2]
    padded, meta = pad_for_inference(image)
    with no_grad():
        coarse, base, alpha, sets = model(padded[None], search="kdtree")
    gh, gw = math.ceil(h / REGION), math.ceil(w / REGION)
    return InferenceResult(alpha=alpha.data[0, :h, :w].copy(), coarse_alpha=base.data[0, :h, :w].copy(),
                           trimap=coarse.trimap.data[0, :gh, :gw].copy(), regions=sets[0], meta=meta)


def evaluate_pairs(pairs, loss_cfg, workers=None):
    """``pairs``: iterable of (name, predicted alpha, ground-truth alpha) -> MetricReport."""
    pairs = list(pairs)

    def one(item):
        name, pred, gt = item
        mask = make_pseudo_trimap(gt, loss_cfg, levels=(1,))[1].uncertain
        return name, evaluate_matte(pred, gt, mask)

    report = MetricReport()
    for name, raw in parallel_map(one, pairs, workers):
        report.add(name, raw)
    return report


def evaluate(image_dir, gt_dir, ckpt, workers=None):
    """Run inference on every image in ``image_dir`` and score against same-stem mattes in ``gt_dir``."""
    model = _as_model(ckpt)
    images = list_images(image_dir)
    gts = list_images(gt_dir)
    _check_pairs(images, gts)
    pairs = []
    for stem in images:
        image = _rgb(read_image(images[stem]))
        gt = _gray(read_image(gts[stem]))
        if gt.shape != image.shape[:2]:
            raise ImageFormatError(f"{stem}: image {image.shape[:2]} and matte {gt.shape} differ in size")
        pairs.append((stem, infer(image, model).alpha, gt))
    return evaluate_pairs(pairs, model.config.loss, workers)

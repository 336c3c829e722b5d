"""Datasets, labeled/unlabeled splits, label noise, augmentation and batching."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ParseError


@dataclass(frozen=True)
class Dataset:
    """Flattened instances with integer labels (-1 marks an unknown label).

    ``grid_shape`` is set for image sources so augmentations can treat rows
    as 2-D grids.
    """

    instances: np.ndarray
    labels: np.ndarray
    num_classes: int
    grid_shape: tuple = None

    def __post_init__(self):
        if self.instances.ndim != 2:
            raise ParameterError("instances must be a 2-D array (n, dim)")
        if len(self.instances) != len(self.labels):
            raise ParameterError("instances and labels differ in length")
        if np.any(self.labels >= self.num_classes) or np.any(self.labels < -1):
            raise ParameterError(f"labels must lie in [0, {self.num_classes}) or be -1")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.instances.shape[1]

    def subset(self, idx):
        return Dataset(self.instances[idx], self.labels[idx], self.num_classes, self.grid_shape)


@dataclass(frozen=True)
class LabeledSet:
    instances: np.ndarray
    labels: np.ndarray
    num_classes: int
    clean_labels: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class UnlabeledSet:
    """Unlabeled pool. ``eval_labels`` is for metrics only; training code
    receives ``instances`` and nothing else."""

    instances: np.ndarray
    eval_labels: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.instances)


# -- loading -----------------------------------------------------------------

def load(path, fmt=None, labels_path=None):
    """Load a CSV (``label,f0,f1,...``) or IDX file into a ``Dataset``.

    ``fmt`` defaults to the file extension. For IDX, ``labels_path`` points at
    the matching label file; without it every label is -1.
    """
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "idx")
    with open(path, "rb") as fh:
        raw = fh.read()
    if fmt == "csv":
        return _parse_csv(raw)
    if fmt == "idx":
        images = parse_idx(raw)
        n = images.shape[0]
        grid = images.shape[1:] if images.ndim > 2 else None
        x = images.reshape(n, -1).astype(np.float64)
        if images.dtype == np.uint8:
            x /= 255.0
        if labels_path is None:
            labels = np.full(n, -1, dtype=np.int64)
        else:
            with open(labels_path, "rb") as fh:
                labels = parse_idx(fh.read()).astype(np.int64).ravel()
            if len(labels) != n:
                raise ParseError(f"label file has {len(labels)} entries but image file has {n}")
        return Dataset(x, labels, int(labels.max()) + 1 if n and labels.max() >= 0 else 0, grid)
    raise ParameterError(f"unknown dataset format {fmt!r}")


def _parse_csv(raw):
    if not raw.strip():
        raise ParseError("empty CSV file", 0)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("CSV is not valid UTF-8", e.start) from None
    lines = text.split("\n")
    header = [h.strip() for h in lines[0].rstrip("\r").split(",")]
    expected = ["label"] + [f"f{i}" for i in range(len(header) - 1)]
    if header != expected or len(header) < 2:
        raise ParseError("CSV header must be 'label,f0,f1,...'", 0)
    offset = len(lines[0].encode("utf-8")) + 1
    labels, rows = [], []
    for line in lines[1:]:
        nbytes = len(line.encode("utf-8")) + 1
        line = line.rstrip("\r")
        if line.strip():
            cells = line.split(",")
            if len(cells) != len(header):
                raise ParseError(f"row has {len(cells)} fields, header has {len(header)}", offset)
            try:
                labels.append(int(cells[0]))
                rows.append([float(c) for c in cells[1:]])
            except ValueError:
                raise ParseError("non-numeric field", offset) from None
        offset += nbytes
    if not rows:
        raise ParseError("CSV has a header but no rows", offset - 1)
    labels = np.array(labels, dtype=np.int64)
    if np.any(labels < -1):
        raise ParseError("labels must be >= 0, or -1 for unlabeled rows")
    return Dataset(np.array(rows, dtype=np.float64), labels, int(labels.max()) + 1)


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def parse_idx(raw):
    """Decode an IDX blob (big-endian magic 0x0000TTNN, then NN uint32 dims)."""
    if len(raw) < 4:
        raise ParseError("truncated IDX header", 0)
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES or ndim == 0:
        raise ParseError(f"bad IDX magic 0x{raw[:4].hex()}", 0)
    if len(raw) < 4 + 4 * ndim:
        raise ParseError("truncated IDX dimensions", 4)
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[dtype_code])
    start = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(raw) - start != count * dtype.itemsize:
        raise ParseError(f"IDX payload is {len(raw) - start} bytes, expected {count * dtype.itemsize}", start)
    data = np.frombuffer(raw, dtype=dtype, offset=start, count=count).reshape(dims)
    return data.astype(dtype.newbyteorder("="))


def write_idx(path, array):
    array = np.asarray(array)
    codes = {np.dtype(v).str[1:]: k for k, v in _IDX_TYPES.items()}
    code = codes.get(array.dtype.str[1:])
    if code is None:
        raise ParameterError(f"IDX cannot store dtype {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(np.dtype(_IDX_TYPES[code])).tobytes())


def write_csv(path, dataset, float_format=".17g"):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["label", *(f"f{i}" for i in range(dataset.dim))]) + "\n")
        for y, x in zip(dataset.labels, dataset.instances):
            fh.write(",".join([str(int(y)), *(format(float(v), float_format) for v in x)]) + "\n")


# -- synthetic benchmarks ----------------------------------------------------

def synth(kind, n, num_classes, noise, seed, dim=32, center_scale=1.0):
    """Deterministic toy datasets.

    ``moons``: two interleaved half circles in 2-D (``num_classes`` must be 2).
    ``blobs``: isotropic Gaussians with standard deviation ``noise`` around
    ``num_classes`` centers drawn from N(0, center_scale**2 I) in ``dim``
    dimensions. Class sizes differ by at most one.
    """
    if n < num_classes:
        raise ParameterError(f"need n >= number of classes, got n={n}")
    if noise < 0:
        raise ParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    if kind == "moons":
        if num_classes != 2:
            raise ParameterError("moons has exactly 2 classes")
        t = rng.uniform(0.0, np.pi, size=n)
        x = np.where(
            labels[:, None] == 0,
            np.stack([np.cos(t), np.sin(t)], axis=1),
            np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1),
        )
    elif kind == "blobs":
        centers = rng.normal(0.0, center_scale, size=(num_classes, dim))
        x = centers[labels]
    else:
        raise ParameterError(f"unknown synthetic dataset {kind!r}")
    x = x + rng.normal(0.0, 1.0, size=x.shape) * noise
    perm = rng.permutation(n)
    return Dataset(x[perm], labels[perm].astype(np.int64), num_classes)


def holdout(dataset, test_fraction, seed):
    """Random train/test split of a dataset."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


# -- labeled / unlabeled split and noise ---------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    seed: int = 0
    batch_size: int = 32
    mu: int = 3

    def __post_init__(self):
        if self.labels_per_class < 1:
            raise ParameterError("labels_per_class must be >= 1")
        if self.batch_size < 1 or self.mu < 0:
            raise ParameterError("batch_size must be >= 1 and mu >= 0")


def split(dataset, spec):
    """Pick ``labels_per_class`` items of every class as the labeled set.

    Everything else becomes unlabeled, with its ground truth moved to
    ``eval_labels``. Rows whose label is -1 always land in the unlabeled set.
    """
    rng = np.random.default_rng(spec.seed)
    labeled_idx = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < spec.labels_per_class:
            raise ParameterError(f"class {c} has {len(members)} items, need {spec.labels_per_class}")
        labeled_idx.append(rng.choice(members, size=spec.labels_per_class, replace=False))
    labeled_idx = np.sort(np.concatenate(labeled_idx))
    mask = np.ones(len(dataset), dtype=bool)
    mask[labeled_idx] = False
    unlabeled_idx = np.flatnonzero(mask)
    labels = dataset.labels[labeled_idx]
    labeled = LabeledSet(dataset.instances[labeled_idx], labels, dataset.num_classes, labels.copy())
    unlabeled = UnlabeledSet(dataset.instances[unlabeled_idx], dataset.labels[unlabeled_idx])
    return labeled, unlabeled


@dataclass(frozen=True)
class NoiseSpec:
    """Asymmetric label noise: with probability ``rate`` a label of class ``c``
    becomes ``mapping[c]``. Classes missing from the mapping are untouched."""

    mapping: dict = field(default_factory=dict)
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ParameterError("noise rate must lie in [0, 1]")
        for src, dst in self.mapping.items():
            if int(src) == int(dst):
                raise ParameterError(f"noise mapping sends class {src} to itself")


def inject_noise(labeled, spec):
    mapping = {int(k): int(v) for k, v in spec.mapping.items()}
    for src, dst in mapping.items():
        if not (0 <= src < labeled.num_classes and 0 <= dst < labeled.num_classes):
            raise ParameterError(f"noise mapping {src}->{dst} is out of range")
    rng = np.random.default_rng(spec.seed)
    u = rng.random(len(labeled))
    labels = labeled.labels.copy()
    for i, y in enumerate(labeled.labels):
        if int(y) in mapping and u[i] < spec.rate:
            labels[i] = mapping[int(y)]
    return LabeledSet(labeled.instances, labels, labeled.num_classes, labeled.clean_labels)


# -- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationSpec:
    """Vector inputs: weak adds N(0, sigma_weak^2); strong adds
    N(0, sigma_strong^2) and zeroes a ``dropout`` fraction of coordinates.

    Grid inputs (``grid_shape`` set): weak is a random horizontal flip plus a
    shift of up to ``shift`` pixels; strong adds a ``cutout`` square and a
    multiplicative intensity jitter of up to ``jitter``.
    """

    sigma_weak: float = 0.05
    sigma_strong: float = 0.2
    dropout: float = 0.25
    grid_shape: tuple = None
    flip_prob: float = 0.5
    shift: int = 2
    cutout: int = 8
    jitter: float = 0.2

    def __post_init__(self):
        if not self.sigma_strong >= self.sigma_weak >= 0:
            raise ParameterError("need sigma_strong >= sigma_weak >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout fraction must lie in [0, 1)")
        if not 0.0 <= self.flip_prob <= 1.0 or self.shift < 0 or self.cutout < 0 or self.jitter < 0:
            raise ParameterError("invalid grid augmentation parameters")


def augment(x, spec, strength, rng):
    """Augment a single instance (see ``augment_batch``)."""
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], spec, strength, rng)[0]


def augment_batch(x, spec, strength, rng):
    if strength not in ("weak", "strong"):
        raise ParameterError(f"strength must be 'weak' or 'strong', got {strength!r}")
    x = np.asarray(x, dtype=np.float64)
    if spec.grid_shape is not None:
        return _augment_grid(x, spec, strength, rng)
    n, d = x.shape
    if strength == "weak":
        return x + rng.normal(0.0, 1.0, size=x.shape) * spec.sigma_weak
    out = x + rng.normal(0.0, 1.0, size=x.shape) * spec.sigma_strong
    k = int(round(spec.dropout * d))
    if k:
        drop = np.argsort(rng.random((n, d)), axis=1)[:, :k]
        np.put_along_axis(out, drop, 0.0, axis=1)
    return out


def _augment_grid(x, spec, strength, rng):
    n = len(x)
    h, w = spec.grid_shape[-2:]
    g = x.reshape(n, -1, h, w).copy()
    flip = rng.random(n) < spec.flip_prob
    g[flip] = g[flip][..., ::-1]
    shifts = rng.integers(-spec.shift, spec.shift + 1, size=(n, 2))
    for i, (dy, dx) in enumerate(shifts):
        g[i] = _shift(g[i], dy, dx)
    if strength == "strong":
        if spec.cutout:
            cy = rng.integers(0, h, size=n)
            cx = rng.integers(0, w, size=n)
            half = spec.cutout // 2
            for i in range(n):
                g[i, :, max(cy[i] - half, 0):cy[i] - half + spec.cutout, max(cx[i] - half, 0):cx[i] - half + spec.cutout] = 0.0
        scale = 1.0 + rng.uniform(-spec.jitter, spec.jitter, size=(n, 1, 1, 1))
        g = np.clip(g * scale, 0.0, 1.0)
    return g.reshape(n, -1)


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = img[..., ys, xs]
    return out


# -- batching ----------------------------------------------------------------

class _EpochSampler:
    """Draws index batches, reshuffling at every epoch boundary."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def take(self, k):
        out = []
        while k > 0:
            if self._pos == self.n:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
            step = min(k, self.n - self._pos)
            out.append(self._perm[self._pos:self._pos + step])
            self._pos += step
            k -= step
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class LabeledBatch:
    weak: np.ndarray
    labels: np.ndarray


@dataclass
class UnlabeledBatch:
    weak: np.ndarray
    strong: np.ndarray


class BatchStream:
    """Yields (labeled batch of B, unlabeled batch of mu * B) pairs.

    Labeled and unlabeled draws use independent random streams, so the
    labeled sequence is the same whatever happens on the unlabeled side.
    """

    def __init__(self, labeled, unlabeled, spec, aug, rng):
        if len(labeled) == 0:
            raise ParameterError("labeled set is empty")
        self.labeled = labeled
        self.unlabeled_x = None if unlabeled is None else unlabeled.instances
        self.spec = spec
        self.aug = aug
        lab_rng, unl_rng = rng.spawn(2)
        self._lab_order, self._lab_aug = lab_rng.spawn(2)
        self._unl_order, self._unl_aug = unl_rng.spawn(2)
        self._lab = _EpochSampler(len(labeled), self._lab_order)
        n_unl = 0 if self.unlabeled_x is None else len(self.unlabeled_x)
        self._unl = _EpochSampler(n_unl, self._unl_order) if n_unl else None

    def next_labeled(self):
        idx = self._lab.take(self.spec.batch_size)
        weak = augment_batch(self.labeled.instances[idx], self.aug, "weak", self._lab_aug)
        return LabeledBatch(weak, self.labeled.labels[idx])

    def next_unlabeled(self):
        k = self.spec.mu * self.spec.batch_size
        if self._unl is None or k == 0:
            d = self.labeled.instances.shape[1]
            return UnlabeledBatch(np.zeros((0, d)), np.zeros((0, d)))
        x = self.unlabeled_x[self._unl.take(k)]
        weak = augment_batch(x, self.aug, "weak", self._unl_aug)
        strong = augment_batch(x, self.aug, "strong", self._unl_aug)
        return UnlabeledBatch(weak, strong)

    def next_batches(self):
        return self.next_labeled(), self.next_unlabeled()


def next_batches(stream):
    return stream.next_batches()

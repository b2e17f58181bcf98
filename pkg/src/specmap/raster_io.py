"""Raw band-sequential raster I/O, training regions, and classification map files.

Raster framing is described by a plain-text layout sidecar instead of the
binary satellite exchange header: the sidecar carries the same byte counts
(file header, per-line prefix/suffix, record length) and is diffable and
hand-editable.  All readers validate sizes up front so that decoding is
total over conforming files.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Colors assigned to classes when no ROI legend is available (e.g. when a map
# is produced from a signature file alone).  Class i gets entry (i-1) mod len.
DEFAULT_PALETTE = (
    (255, 0, 0),
    (0, 255, 0),
    (0, 0, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 128, 0),
    (128, 0, 255),
    (0, 128, 0),
    (128, 128, 128),
)

_LAYOUT_KEYS = (
    "file_header_bytes",
    "line_prefix_bytes",
    "line_suffix_bytes",
    "scan_lines",
    "pixels_per_line",
    "bands",
    "bytes_per_pixel",
)


@dataclass(frozen=True)
class RasterLayout:
    """Byte-level description of a raw band-sequential (BSQ) file.

    Each scan line of each band is stored as one record:
    ``line_prefix_bytes`` of framing, then ``pixels_per_line`` samples of
    ``bytes_per_pixel`` each, then ``line_suffix_bytes`` of framing.  The
    whole file is ``file_header_bytes`` followed by bands x scan_lines
    records.  ``byte_order`` only matters for 2-byte samples.
    """

    file_header_bytes: int
    line_prefix_bytes: int
    line_suffix_bytes: int
    scan_lines: int
    pixels_per_line: int
    bands: int
    bytes_per_pixel: int
    byte_order: str = "big"

    def __post_init__(self):
        for name in ("file_header_bytes", "line_prefix_bytes", "line_suffix_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("scan_lines", "pixels_per_line", "bands"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.bytes_per_pixel not in (1, 2):
            raise ValueError(f"bytes_per_pixel must be 1 or 2, got {self.bytes_per_pixel}")
        if self.byte_order not in ("big", "little"):
            raise ValueError(f"byte_order must be 'big' or 'little', got {self.byte_order!r}")

    @property
    def record_length(self) -> int:
        """Bytes per stored scan line, framing included."""
        return (
            self.line_prefix_bytes
            + self.pixels_per_line * self.bytes_per_pixel
            + self.line_suffix_bytes
        )

    @property
    def expected_file_size(self) -> int:
        return self.file_header_bytes + self.bands * self.scan_lines * self.record_length


@dataclass(frozen=True)
class BandStack:
    """A bands x rows x cols block of digital numbers, one plane per band.

    Samples are kept as float32: exact for 8- and 16-bit digital numbers
    while halving the footprint of float64 on full scenes.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"band stack must be 3-d (bands, rows, cols), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all band stack dimensions must be >= 1, got shape {arr.shape}")
        if arr.size and float(arr.min()) < 0:
            raise ValueError("digital numbers must be non-negative")
        object.__setattr__(self, "values", arr)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    def pixel(self, row: int, col: int) -> np.ndarray:
        """The measurement vector at (row, col): one component per band."""
        return self.values[:, row, col].astype(np.float64)

    def pixels_at(self, coords) -> np.ndarray:
        """Stack the measurement vectors at (row, col) pairs into an (n, bands) matrix."""
        coords = list(coords)
        rows = np.fromiter((r for r, _ in coords), dtype=np.intp, count=len(coords))
        cols = np.fromiter((c for _, c in coords), dtype=np.intp, count=len(coords))
        return self.values[:, rows, cols].T.astype(np.float64)


@dataclass(frozen=True)
class ClassDef:
    """One training class: id, display name, and map color."""

    class_id: int
    name: str
    color: tuple[int, int, int]

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"class id must be >= 1, got {self.class_id}")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise ValueError(f"color must be three values in 0..255, got {self.color}")


@dataclass(frozen=True)
class TrainingRegions:
    """User-delineated ground-truth pixels, grouped by class.

    Class ids are consecutive from 1 in declaration order, every class has at
    least one member pixel, and no pixel belongs to two classes.
    """

    classes: tuple[ClassDef, ...]
    members: dict[int, frozenset] = field(compare=False)

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ValueError("training regions must define at least one class")
        for pos, cls in enumerate(classes, start=1):
            if cls.class_id != pos:
                raise ValueError(
                    f"class ids must be consecutive from 1; position {pos} has id {cls.class_id}"
                )
        members = {cid: frozenset(self.members.get(cid, ())) for cid in (c.class_id for c in classes)}
        seen: dict[tuple, int] = {}
        for cid, coords in members.items():
            if not coords:
                raise ValueError(f"class {cid} has no member pixels")
            for coord in coords:
                other = seen.setdefault(coord, cid)
                if other != cid:
                    raise ValueError(f"pixel {coord} belongs to both class {other} and class {cid}")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "members", members)

    @property
    def k(self) -> int:
        return len(self.classes)

    def sorted_members(self, class_id: int) -> list:
        """Member coordinates of one class in (row, col) order, for deterministic iteration."""
        return sorted(self.members[class_id])

    def total_pixels(self) -> int:
        return sum(len(m) for m in self.members.values())

    def legend(self) -> dict[int, tuple[str, tuple[int, int, int]]]:
        return {c.class_id: (c.name, c.color) for c in self.classes}

    def check_inside(self, rows: int, cols: int) -> None:
        for cid, coords in self.members.items():
            for r, c in coords:
                if not (0 <= r < rows and 0 <= c < cols):
                    raise ValueError(
                        f"class {cid} pixel ({r}, {c}) is outside the {rows}x{cols} raster"
                    )


@dataclass(frozen=True)
class ClassificationMap:
    """Per-pixel class labels (0 = unclassified) plus the class legend."""

    labels: np.ndarray
    legend: dict[int, tuple[str, tuple[int, int, int]]]

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"label grid must be 2-d, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(np.int32)
        k = len(self.legend)
        if sorted(self.legend) != list(range(1, k + 1)):
            raise ValueError(f"legend ids must be consecutive from 1, got {sorted(self.legend)}")
        if arr.size and (int(arr.min()) < 0 or int(arr.max()) > k):
            raise ValueError(f"labels must lie in 0..{k}")
        object.__setattr__(self, "labels", arr)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def k(self) -> int:
        return len(self.legend)


def default_legend(names) -> dict[int, tuple[str, tuple[int, int, int]]]:
    """Build a legend from class names using the default palette."""
    return {
        i: (name, DEFAULT_PALETTE[(i - 1) % len(DEFAULT_PALETTE)])
        for i, name in enumerate(names, start=1)
    }


def read_layout(path) -> RasterLayout:
    """Parse a layout sidecar: one ``key: value`` per line, ``#`` comments.

    Mandatory keys are the seven byte-count/dimension fields; ``byte_order``
    (``big`` or ``little``) is optional and defaults to big-endian.  Unknown
    keys are ignored with a warning so sidecars can carry extra metadata.
    """
    path = Path(path)
    fields: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key: value', got {raw.strip()!r}")
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "byte_order":
            if value not in ("big", "little"):
                raise ValueError(f"{path}:{lineno}: byte_order must be 'big' or 'little', got {value!r}")
            fields[key] = value
        elif key in _LAYOUT_KEYS:
            try:
                fields[key] = int(value)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value {value!r} for key '{key}'") from None
        else:
            warnings.warn(f"{path}:{lineno}: ignoring unknown layout key '{key}'")
    missing = [key for key in _LAYOUT_KEYS if key not in fields]
    if missing:
        raise ValueError(f"{path}: missing key(s) {', '.join(missing)}")
    return RasterLayout(**fields)  # type: ignore[arg-type]


def write_layout(layout: RasterLayout, path, comments=()) -> Path:
    """Write a layout sidecar; ``comments`` become leading ``#`` lines."""
    path = Path(path)
    lines = [f"# {c}" for c in comments]
    for key in _LAYOUT_KEYS:
        lines.append(f"{key}: {getattr(layout, key)}")
    lines.append(f"byte_order: {layout.byte_order}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_bsq(data_path, layout: RasterLayout) -> BandStack:
    """Decode a raw BSQ file into a band stack, skipping all framing bytes.

    The file size must equal the layout's expected size exactly; anything
    else raises with both byte counts so truncation is obvious.
    """
    data_path = Path(data_path)
    raw = np.fromfile(str(data_path), dtype=np.uint8)
    expected = layout.expected_file_size
    if raw.size != expected:
        raise ValueError(
            f"size mismatch: {data_path} is {raw.size} bytes but the layout expects {expected} bytes"
        )
    records = raw[layout.file_header_bytes :].reshape(
        layout.bands * layout.scan_lines, layout.record_length
    )
    start = layout.line_prefix_bytes
    payload = records[:, start : start + layout.pixels_per_line * layout.bytes_per_pixel]
    if layout.bytes_per_pixel == 1:
        samples = payload
    else:
        dtype = ">u2" if layout.byte_order == "big" else "<u2"
        samples = np.ascontiguousarray(payload).view(dtype)
    values = samples.reshape(layout.bands, layout.scan_lines, layout.pixels_per_line)
    return BandStack(values.astype(np.float32))


def write_bsq(image: BandStack, layout: RasterLayout, path) -> Path:
    """Encode a band stack as a raw BSQ file matching ``layout`` (framing zero-filled)."""
    if (image.bands, image.rows, image.cols) != (
        layout.bands,
        layout.scan_lines,
        layout.pixels_per_line,
    ):
        raise ValueError(
            f"image shape {(image.bands, image.rows, image.cols)} does not match layout "
            f"{(layout.bands, layout.scan_lines, layout.pixels_per_line)}"
        )
    max_dn = 2 ** (8 * layout.bytes_per_pixel) - 1
    dn = np.rint(image.values.astype(np.float64))
    if float(dn.min()) < 0 or float(dn.max()) > max_dn:
        raise ValueError(f"digital numbers outside 0..{max_dn} cannot be stored")
    if layout.bytes_per_pixel == 1:
        pixel_bytes = dn.astype(np.uint8).reshape(-1, layout.pixels_per_line)
    else:
        dtype = ">u2" if layout.byte_order == "big" else "<u2"
        pixel_bytes = dn.astype(dtype).reshape(-1, layout.pixels_per_line).view(np.uint8)
    n_records = layout.bands * layout.scan_lines
    records = np.zeros((n_records, layout.record_length), dtype=np.uint8)
    start = layout.line_prefix_bytes
    records[:, start : start + layout.pixels_per_line * layout.bytes_per_pixel] = pixel_bytes
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(bytes(layout.file_header_bytes))
        fh.write(records.tobytes())
    return path


def parse_roi(path, rows: int, cols: int) -> TrainingRegions:
    """Parse a training-region file against a rows x cols raster.

    Grammar: ``class <id> <name> <r> <g> <b>`` opens a class, then
    ``pixel <row> <col>`` and ``rect <row0> <col0> <row1> <col1>`` (inclusive
    corners) add members.  Classes must be declared in id order starting at 1.
    A pixel may be listed twice within one class (deduplicated) but never in
    two classes.
    """
    path = Path(path)
    classes: list[ClassDef] = []
    members: dict[int, set] = {}
    claimed: dict[tuple, int] = {}
    current: int | None = None

    def claim(r: int, c: int, lineno: int) -> None:
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(
                f"{path}:{lineno}: pixel ({r}, {c}) is outside the {rows}x{cols} raster"
            )
        owner = claimed.setdefault((r, c), current)
        if owner != current:
            raise ValueError(
                f"{path}:{lineno}: pixel ({r}, {c}) already claimed by class {owner}"
            )
        members[current].add((r, c))

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]
        try:
            if kind == "class":
                if len(tokens) != 6:
                    raise ValueError("expected 'class <id> <name> <r> <g> <b>'")
                cid = int(tokens[1])
                if cid != len(classes) + 1:
                    raise ValueError(f"class ids must appear in order starting at 1, got {cid}")
                classes.append(ClassDef(cid, tokens[2], (int(tokens[3]), int(tokens[4]), int(tokens[5]))))
                members[cid] = set()
                current = cid
            elif kind == "pixel":
                if current is None:
                    raise ValueError("'pixel' line before any 'class' line")
                if len(tokens) != 3:
                    raise ValueError("expected 'pixel <row> <col>'")
                claim(int(tokens[1]), int(tokens[2]), lineno)
            elif kind == "rect":
                if current is None:
                    raise ValueError("'rect' line before any 'class' line")
                if len(tokens) != 5:
                    raise ValueError("expected 'rect <row0> <col0> <row1> <col1>'")
                r0, c0, r1, c1 = (int(t) for t in tokens[1:])
                for r in range(min(r0, r1), max(r0, r1) + 1):
                    for c in range(min(c0, c1), max(c0, c1) + 1):
                        claim(r, c, lineno)
            else:
                raise ValueError(f"unknown directive {kind!r}")
        except ValueError as exc:
            msg = str(exc)
            if not msg.startswith(str(path)):
                raise ValueError(f"{path}:{lineno}: {msg}") from None
            raise
    return TrainingRegions(tuple(classes), {cid: frozenset(m) for cid, m in members.items()})


def write_roi(regions: TrainingRegions, path) -> Path:
    """Serialize training regions as one class block per class, pixels sorted."""
    path = Path(path)
    lines = []
    for cls in regions.classes:
        r, g, b = cls.color
        lines.append(f"class {cls.class_id} {cls.name} {r} {g} {b}")
        for row, col in regions.sorted_members(cls.class_id):
            lines.append(f"pixel {row} {col}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def split_regions(regions: TrainingRegions, fraction: float, seed: int):
    """Randomly partition every class's pixels into train/test regions.

    Roughly ``fraction`` of each class goes to the training side; both sides
    keep at least one pixel per class.  The shuffle is seeded, so a given
    (regions, fraction, seed) triple always produces the same split.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train: dict[int, frozenset] = {}
    test: dict[int, frozenset] = {}
    for cls in regions.classes:
        coords = regions.sorted_members(cls.class_id)
        n = len(coords)
        if n < 2:
            raise ValueError(f"class {cls.class_id} has only {n} pixel(s); cannot split")
        n_train = min(max(int(round(fraction * n)), 1), n - 1)
        order = rng.permutation(n)
        train[cls.class_id] = frozenset(coords[i] for i in order[:n_train])
        test[cls.class_id] = frozenset(coords[i] for i in order[n_train:])
    return (
        TrainingRegions(regions.classes, train),
        TrainingRegions(regions.classes, test),
    )


def write_map(cmap: ClassificationMap, out_prefix) -> tuple[Path, Path, Path]:
    """Write a classification map as label layer, PPM image, and legend.

    ``<prefix>.lbl`` holds rows x cols label bytes row-major, ``<prefix>.ppm``
    is a binary P6 image with class colors (unclassified painted black), and
    ``<prefix>.leg`` lists ``id name r g b`` per class.  The legend starts
    with a ``# size <rows> <cols>`` comment so the raw label layer can be
    re-read without the original raster.
    """
    if cmap.k > 255:
        raise ValueError(f"{cmap.k} classes overflow the one-byte label layer (max 255)")
    prefix = Path(out_prefix)
    if prefix.parent and not prefix.parent.exists():
        raise ValueError(f"output directory {prefix.parent} does not exist")
    lbl_path = prefix.with_name(prefix.name + ".lbl")
    ppm_path = prefix.with_name(prefix.name + ".ppm")
    leg_path = prefix.with_name(prefix.name + ".leg")

    labels = cmap.labels.astype(np.uint8)
    lbl_path.write_bytes(labels.tobytes())

    lut = np.zeros((cmap.k + 1, 3), dtype=np.uint8)
    for cid, (_, color) in cmap.legend.items():
        lut[cid] = color
    header = f"P6\n{cmap.cols} {cmap.rows}\n255\n".encode("ascii")
    ppm_path.write_bytes(header + lut[labels].tobytes())

    lines = [f"# size {cmap.rows} {cmap.cols}"]
    for cid in sorted(cmap.legend):
        name, (r, g, b) = cmap.legend[cid]
        lines.append(f"{cid} {name} {r} {g} {b}")
    leg_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return lbl_path, ppm_path, leg_path


def read_legend(path):
    """Read a legend file; returns (legend, rows, cols) with dims None if absent."""
    path = Path(path)
    legend: dict[int, tuple[str, tuple[int, int, int]]] = {}
    rows = cols = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            tokens = line[1:].split()
            if len(tokens) == 3 and tokens[0] == "size":
                rows, cols = int(tokens[1]), int(tokens[2])
            continue
        tokens = line.split()
        if len(tokens) != 5:
            raise ValueError(f"{path}:{lineno}: expected 'id name r g b', got {raw.strip()!r}")
        cid = int(tokens[0])
        legend[cid] = (tokens[1], (int(tokens[2]), int(tokens[3]), int(tokens[4])))
    if not legend:
        raise ValueError(f"{path}: legend file defines no classes")
    return legend, rows, cols


def read_map(lbl_path, legend_path) -> ClassificationMap:
    """Re-read a label layer written by :func:`write_map` using its legend sidecar."""
    legend, rows, cols = read_legend(legend_path)
    if rows is None or cols is None:
        raise ValueError(f"{legend_path}: legend lacks the '# size <rows> <cols>' line")
    raw = Path(lbl_path).read_bytes()
    if len(raw) != rows * cols:
        raise ValueError(
            f"size mismatch: {lbl_path} is {len(raw)} bytes but the legend expects {rows * cols}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols)
    return ClassificationMap(labels.astype(np.int32), legend)

"""Shortcut pattern taxonomy: which encoder layers feed which decoder layers.

A shortcut set is a list of (i, j) pairs meaning "the hidden state after
encoder layer i is injected before decoder layer j". Patterns are described
along three independent axes:

* order: u-shape (deeper encoder layers feed shallower decoder layers) or
  aligned-depth (deeper feeds deeper),
* distribution: where the decoder-side ends sit (uniform over the stack,
  packed at the bottom, packed at the top),
* density: sparse with an explicit connection count, or dense with one
  connection per encoder layer.

The single-connection set {(encoder_depth, 1)} is the conventional design:
only the final encoder state enters, at the first decoder layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

ORDERS = ("u-shape", "aligned-depth")
DISTRIBUTIONS = ("uniform", "bottom", "top")
DENSITIES = ("sparse", "dense")

# distribution classification: mean normalized decoder end, see classify()
_BOTTOM_BELOW = 0.35
_TOP_ABOVE = 0.65


@dataclass(frozen=True)
class PatternSpec:
    """The three pattern axes plus the connection count for sparse sets."""

    order: str = "u-shape"
    distribution: str = "uniform"
    density: str = "sparse"
    connections: int = 8

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(
                f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}"
            )
        if self.density not in DENSITIES:
            raise ConfigError(f"density must be one of {DENSITIES}, got {self.density!r}")
        if self.density == "sparse" and self.connections < 1:
            raise ConfigError(f"sparse pattern needs >= 1 connection, got {self.connections}")


@dataclass(frozen=True)
class ShortcutSet:
    """Validated, canonically ordered set of shortcut connections.

    Connections are stored sorted by decoder end. Encoder ends lie in
    [1, encoder_depth], decoder ends in [1, decoder_depth], and decoder
    ends are unique: the injection rule admits at most one shortcut per
    decoder layer.
    """

    connections: tuple[tuple[int, int], ...]
    encoder_depth: int
    decoder_depth: int

    def __post_init__(self):
        if self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ConfigError("stack depths must be >= 1")
        seen_j = set()
        for pair in self.connections:
            if len(pair) != 2:
                raise ConfigError(f"connection must be a pair, got {pair!r}")
            i, j = pair
            if not (1 <= i <= self.encoder_depth):
                raise ConfigError(
                    f"encoder end {i} outside [1, {self.encoder_depth}] in ({i}, {j})"
                )
            if not (1 <= j <= self.decoder_depth):
                raise ConfigError(
                    f"decoder end {j} outside [1, {self.decoder_depth}] in ({i}, {j})"
                )
            if j in seen_j:
                raise ConfigError(f"decoder layer {j} has more than one shortcut")
            seen_j.add(j)
        ordered = tuple(sorted((int(i), int(j)) for i, j in self.connections))
        object.__setattr__(self, "connections",
                           tuple(sorted(ordered, key=lambda c: c[1])))

    def __len__(self) -> int:
        return len(self.connections)

    def __iter__(self):
        return iter(self.connections)

    def sources(self) -> dict[int, int]:
        """Map decoder layer -> encoder layer for the connected layers."""
        return {j: i for i, j in self.connections}

    def first_entry_layer(self) -> int:
        if not self.connections:
            raise ConfigError("empty shortcut set has no entry layer")
        return self.connections[0][1]

    @property
    def is_conventional(self) -> bool:
        return self.connections == ((self.encoder_depth, 1),)

    # -- file format: header "L_v L_t", then one "i j" line per connection --

    def to_text(self) -> str:
        lines = [f"{self.encoder_depth} {self.decoder_depth}"]
        lines += [f"{i} {j}" for i, j in self.connections]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ShortcutSet":
        rows = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"pattern line must hold two integers: {raw!r}")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"pattern line must hold two integers: {raw!r}") from exc
        if not rows:
            raise ConfigError("pattern file is missing the 'encoder_depth decoder_depth' header")
        (enc, dec), conns = rows[0], rows[1:]
        return cls(connections=tuple(conns), encoder_depth=enc, decoder_depth=dec)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ShortcutSet":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read pattern file {path}: {exc}") from exc
        return cls.from_text(text)


def generate(spec: PatternSpec, encoder_depth: int, decoder_depth: int) -> ShortcutSet:
    """Build the shortcut set a PatternSpec describes for the given depths.

    Encoder ends are spaced uniformly with the deepest layer always
    included: stride floor(encoder_depth / k) walking down from
    encoder_depth. That anchoring makes sparse(1) degenerate exactly to the
    conventional {(encoder_depth, 1)}. Decoder ends depend on the
    distribution: uniform strides up from layer 1, bottom packs layers
    1..k, top packs the last k layers. U-shape pairs the deepest encoder
    end with the shallowest decoder end; aligned-depth pairs deepest with
    deepest.
    """
    k = encoder_depth if spec.density == "dense" else spec.connections
    if k > encoder_depth:
        raise ConfigError(
            f"{k} connections cannot be spread over {encoder_depth} encoder layers"
        )
    if k > decoder_depth:
        raise ConfigError(
            f"{k} connections exceed the {decoder_depth} available decoder layers"
        )
    enc_stride = encoder_depth // k
    enc_ends = [encoder_depth - m * enc_stride for m in range(k)]  # descending
    if spec.distribution == "uniform":
        dec_stride = decoder_depth // k
        dec_ends = [1 + m * dec_stride for m in range(k)]
    elif spec.distribution == "bottom":
        dec_ends = list(range(1, k + 1))
    else:
        dec_ends = list(range(decoder_depth - k + 1, decoder_depth + 1))
    if spec.order == "u-shape":
        pairs = zip(enc_ends, dec_ends)
    else:
        pairs = zip(sorted(enc_ends), dec_ends)
    return ShortcutSet(connections=tuple(pairs),
                       encoder_depth=encoder_depth, decoder_depth=decoder_depth)


@dataclass(frozen=True)
class PatternReport:
    """What classify() can recover from a bare connection set."""

    connection_count: int
    density_ratio: float
    is_dense: bool
    is_ushape: bool
    is_aligned_depth: bool
    order_label: str
    distribution_label: str
    is_conventional: bool


def classify(s: ShortcutSet) -> PatternReport:
    """Recover the taxonomy axes from an explicit connection set.

    Order is exact: u-shape iff deeper encoder ends always pair with
    shallower decoder ends (for every pair of connections), aligned-depth
    iff deeper pairs with deeper, mixed otherwise. Sets with fewer than two
    connections satisfy both monotonicity conditions vacuously and are
    labeled degenerate. Density is exact: dense means one connection per
    encoder layer. Distribution is a heuristic on the mean normalized
    decoder end (j - 1) / (decoder_depth - 1): below 0.35 reads as bottom,
    above 0.65 as top, in between as uniform.
    """
    conns = s.connections
    ushape = True
    aligned = True
    for a in range(len(conns)):
        for b in range(len(conns)):
            if a == b:
                continue
            (i1, j1), (i2, j2) = conns[a], conns[b]
            ushape &= (i1 > i2) == (j1 < j2)
            aligned &= (i1 > i2) == (j1 > j2)
    if len(conns) < 2:
        label = "degenerate"
    elif ushape:
        label = "u-shape"
    elif aligned:
        label = "aligned-depth"
    else:
        label = "mixed"

    if conns and s.decoder_depth > 1:
        mean_pos = sum((j - 1) / (s.decoder_depth - 1) for _, j in conns) / len(conns)
    else:
        mean_pos = 0.5
    if mean_pos < _BOTTOM_BELOW:
        dist = "bottom"
    elif mean_pos > _TOP_ABOVE:
        dist = "top"
    else:
        dist = "uniform"

    return PatternReport(
        connection_count=len(conns),
        density_ratio=len(conns) / s.encoder_depth,
        is_dense=len(conns) == s.encoder_depth,
        is_ushape=ushape,
        is_aligned_depth=aligned,
        order_label=label,
        distribution_label=dist,
        is_conventional=s.is_conventional,
    )


def render_ascii(s: ShortcutSet) -> str:
    """Two-column layer diagram with routed connection lines.

    Both stacks are drawn bottom-aligned, layer 1 at the bottom. Each
    connection gets its own vertical lane between the columns; lanes are
    ordered by decoder end. Crossing lines merge into '+' cells. The output
    is a pure function of the set, which is what the frozen golden file in
    the test suite pins down.
    """
    height = max(s.encoder_depth, s.decoder_depth)
    lanes = len(s.connections)
    width = 3 + 2 * lanes + 3  # stub, one column per lane, stub

    grid = [[" "] * width for _ in range(height)]

    def put(r: int, c: int, ch: str) -> None:
        cell = grid[r][c]
        grid[r][c] = ch if cell in (" ", ch) else "+"

    for lane, (i, j) in enumerate(s.connections):
        enc_row = height - i
        dec_row = height - j
        x = 3 + 2 * lane
        top, bot = sorted((enc_row, dec_row))
        for r in range(top, bot + 1):
            put(r, x, "|")
        for c in range(0, x):
            put(enc_row, c, "-")
        for c in range(x + 1, width - 1):
            put(dec_row, c, "-")
        grid[enc_row][x] = "+"
        grid[dec_row][x] = "+"
        if enc_row == dec_row:
            grid[enc_row][x] = "-"
        grid[dec_row][width - 1] = ">"

    plural = "" if lanes == 1 else "s"
    lines = [f"{s.encoder_depth}-layer encoder -> {s.decoder_depth}-layer decoder "
             f"({lanes} connection{plural})"]
    for r in range(height):
        layer = height - r
        left = f"[{layer:>3}]" if layer <= s.encoder_depth else "     "
        right = f"[{layer:>3}]" if layer <= s.decoder_depth else ""
        lines.append(f"{left} {''.join(grid[r])} {right}".rstrip())
    return "\n".join(lines) + "\n"

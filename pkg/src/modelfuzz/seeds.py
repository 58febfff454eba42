"""Hand-designed seed components: three backbones, two necks, four heads.

All seed parts operate at the nominal 32x32 spatial size with one 3-channel
entry per backbone, so every in-scenario combination assembles. Weights are
drawn from a fixed generator, which makes `init` reproducible byte for byte.
"""

from __future__ import annotations

import numpy as np

from .graph import Block, GraphBuilder, chain_blocks
from .repository import Component, Interface, Origin, Repository, save_repository
from . import ops

SEED_RNG = 20240817

CAMERA = "camera_only"
LIDAR = "lidar_only"
FUSION = "camera_lidar"
ALL_SCENARIOS = frozenset({CAMERA, LIDAR, FUSION})
NECKED = frozenset({LIDAR, FUSION})


def _stem_block(rng: np.random.Generator, act: str) -> Block:
    b = GraphBuilder(rng)
    v = b.input(3)
    v = b.op("Conv2D", v, channels=8)
    v = b.op(act, v)
    b.output(v)
    return b.block()


def _residual_block(rng: np.random.Generator) -> Block:
    b = GraphBuilder(rng)
    v0 = b.input(8)
    v1 = b.op("Conv2D", v0, channels=8)
    v2 = b.op("ReLU", v1)
    v3 = b.op("Add", [v0, v2])
    b.output(v3)
    return b.block()


def _conv_act_block(rng: np.random.Generator, act: str) -> Block:
    b = GraphBuilder(rng)
    v = b.input(8)
    v = b.op("Conv2D", v, channels=8)
    v = b.op(act, v)
    b.output(v)
    return b.block()


def _pool_block(rng: np.random.Generator) -> Block:
    b = GraphBuilder(rng)
    v = b.input(8)
    v = b.op("Conv2D", v, channels=8)
    v = b.op("AvgPool2D", v)
    v = b.op("ReLU", v)
    b.output(v)
    return b.block()


def _backbone(cid: str, blocks: list[Block], taps: tuple[int, ...], scenarios: frozenset[str]) -> Component:
    graph, _ = chain_blocks(blocks, taps)
    return Component(
        id=cid,
        kind="backbone",
        graph=graph,
        scenarios=scenarios,
        interface=Interface(graph.entry_channels(), graph.exit_channels()),
        origin=Origin("seed"),
        blocks=tuple(blocks),
        taps=taps,
    )


def _component(cid: str, kind: str, builder: GraphBuilder, scenarios: frozenset[str]) -> Component:
    graph = builder.graph()
    return Component(
        id=cid,
        kind=kind,
        graph=graph,
        scenarios=scenarios,
        interface=Interface(graph.entry_channels(), graph.exit_channels()),
        origin=Origin("seed"),
    )


def build_seed_repository(seed: int = SEED_RNG) -> Repository:
    """Construct the bundled seed repository in memory."""
    rng = np.random.default_rng(seed)
    repo = Repository(next_id=1)
    repo.ledger_state["operators"] = {k: 1.0 for k in ops.CATALOG}

    # Backbones: a stem block followed by repeated identical body blocks.
    # Taps expose a mid-level and a top-level feature map, both 8 channels.
    repo.insert_seed(
        _backbone(
            "bb-residual",
            [_stem_block(rng, "ReLU")] + [_residual_block(rng) for _ in range(3)],
            taps=(1, 3),
            scenarios=ALL_SCENARIOS,
        )
    )
    repo.insert_seed(
        _backbone(
            "bb-chain",
            [_stem_block(rng, "Tanh")] + [_conv_act_block(rng, "Sigmoid") for _ in range(2)],
            taps=(1, 2),
            scenarios=ALL_SCENARIOS,
        )
    )
    repo.insert_seed(
        _backbone(
            "bb-pool",
            [_stem_block(rng, "ReLU")] + [_pool_block(rng) for _ in range(2)],
            taps=(1, 2),
            scenarios=ALL_SCENARIOS,
        )
    )

    # Necks fuse the two backbone taps into one 16-channel map.
    b = GraphBuilder(rng)
    a0, a1 = b.input(8), b.input(8)
    v = b.op("Concat", [a0, a1])
    v = b.op("Conv2D", v, channels=16, kernel=1)
    v = b.op("ReLU", v)
    b.output(v)
    repo.insert_seed(_component("neck-concat", "neck", b, NECKED))

    b = GraphBuilder(rng)
    a0, a1 = b.input(8), b.input(8)
    v = b.op("Add", [a0, a1])
    v = b.op("MatMul", v, channels=16)
    v = b.op("ReLU", v)
    b.output(v)
    repo.insert_seed(_component("neck-sum", "neck", b, NECKED))

    # Camera heads take both taps directly; a classification-flavored branch
    # and a regression-flavored branch each.
    b = GraphBuilder(rng)
    a0, a1 = b.input(8), b.input(8)
    v = b.op("Concat", [a0, a1])
    v = b.op("Conv2D", v, channels=8, kernel=1)
    v = b.op("ReLU", v)
    cls = b.op("Conv2D", v, channels=4, kernel=1)
    cls = b.op("Softmax", cls)
    reg = b.op("Conv2D", v, channels=2, kernel=1)
    b.output(cls)
    b.output(reg)
    repo.insert_seed(_component("head-pair-concat", "head", b, frozenset({CAMERA})))

    b = GraphBuilder(rng)
    a0, a1 = b.input(8), b.input(8)
    v = b.op("Add", [a0, a1])
    v = b.op("Conv2D", v, channels=8)
    v = b.op("LeakyReLU", v)
    cls = b.op("Conv2D", v, channels=6, kernel=1)
    reg = b.op("Conv2D", v, channels=3, kernel=1)
    b.output(cls)
    b.output(reg)
    repo.insert_seed(_component("head-pair-sum", "head", b, frozenset({CAMERA})))

    # Necked heads take the single fused 16-channel map.
    b = GraphBuilder(rng)
    a0 = b.input(16)
    v = b.op("Conv2D", a0, channels=8, kernel=1)
    v = b.op("ReLU", v)
    cls = b.op("Conv2D", v, channels=4, kernel=1)
    cls = b.op("Sigmoid", cls)
    reg = b.op("Conv2D", v, channels=2, kernel=1)
    b.output(cls)
    b.output(reg)
    repo.insert_seed(_component("head-wide", "head", b, NECKED))

    b = GraphBuilder(rng)
    a0 = b.input(16)
    v = b.op("MatMul", a0, channels=8)
    v = b.op("ReLU", v)
    cls = b.op("Conv2D", v, channels=6, kernel=1)
    cls = b.op("Tanh", cls)
    reg = b.op("Conv2D", v, channels=3, kernel=1)
    b.output(cls)
    b.output(reg)
    repo.insert_seed(_component("head-wide-mix", "head", b, NECKED))

    assert repo.check_index()
    return repo


def write_seed_repository(path: str, seed: int = SEED_RNG) -> Repository:
    repo = build_seed_repository(seed)
    save_repository(repo, path)
    return repo

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acml import tensor as T
from acml.encoders import (
    PRESETS,
    GinConfig,
    ModalityRecord,
    OracleSurrogate,
    PrecomputedStore,
    ProjectionConfig,
    SpectrumSurrogate,
    StringSurrogate,
    batch_graphs,
    encode_batch,
    encode_graph,
    encode_modality,
    grid_spectrum,
    init_gin,
    init_projection,
    n_bins,
    oracle_features,
    project,
    trigram_counts,
)
from acml.errors import (
    CorruptStore,
    DimMismatch,
    EmptyGraph,
    KindMismatch,
    MissingEmbedding,
    NegativeIntensity,
)
from acml.molgraph import AtomAttr, BondAttr, MolGraph, parse_smiles, permute
from acml.store import EmbeddingStore, write_store
from acml.synth import SynthSpec, gen_molecules


def carbon_graph(n, edges):
    return MolGraph([AtomAttr(6) for _ in range(n)], [(u, v, BondAttr()) for u, v in edges])


TWO_TRIANGLES = carbon_graph(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)])
HEXAGON = carbon_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)])


def wl_colors(g, rounds):
    """Plain colour refinement over atom / bond attributes, as a multiset."""
    cols = [(a.atomic_number, int(a.chirality)) for a in g.atoms]
    adj = g.neighbors()
    for _ in range(rounds):
        cols = [
            (cols[u], tuple(sorted((cols[v], int(b.order), int(b.stereo)) for v, b in adj[u])))
            for u in range(g.n_atoms)
        ]
    return sorted(map(repr, cols))


@pytest.fixture(scope="module")
def gin():
    cfg = GinConfig(5, 64)
    return cfg, init_gin(cfg, seed=3)


class TestGin:
    def test_deterministic(self, gin):
        cfg, p = gin
        g = parse_smiles("CC(=O)Nc1ccccc1")
        np.testing.assert_array_equal(encode_graph(g, p, cfg), encode_graph(g, p, cfg))

    def test_wl_equivalent_pair_is_identical(self, gin):
        cfg, p = gin
        assert wl_colors(TWO_TRIANGLES, 6) == wl_colors(HEXAGON, 6)
        a, b = encode_graph(TWO_TRIANGLES, p, cfg), encode_graph(HEXAGON, p, cfg)
        assert np.max(np.abs(a - b)) <= 1e-6 * max(1.0, np.max(np.abs(a)))

    def test_wl_distinguishable_pair_differs(self, gin):
        cfg, p = gin
        path = carbon_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
        assert wl_colors(path, 2) != wl_colors(HEXAGON, 2)
        a, b = encode_graph(path, p, cfg), encode_graph(HEXAGON, p, cfg)
        assert np.max(np.abs(a - b)) > 1e-6

    def test_empty_graph(self, gin):
        cfg, p = gin
        with pytest.raises(EmptyGraph):
            encode_graph(MolGraph([], []), p, cfg)

    def test_permutation_invariance(self, gin):
        cfg, p = gin
        graphs = gen_molecules(SynthSpec(n_molecules=20, seed=5)).graphs
        rng = np.random.default_rng(0)
        for g in graphs:
            ref = encode_graph(g, p, cfg)
            for _ in range(3):
                out = encode_graph(permute(g, rng.permutation(g.n_atoms)), p, cfg)
                assert np.max(np.abs(out - ref)) <= 1e-4 * np.max(np.abs(ref))

    def test_epsilon_changes_output(self):
        g = parse_smiles("CCO")
        p = init_gin(GinConfig(2, 8), 0)
        a = encode_graph(g, p, GinConfig(2, 8, 0.0))
        b = encode_graph(g, p, GinConfig(2, 8, 0.5))
        assert not np.allclose(a, b)


class TestProjection:
    def test_g_image_preset(self):
        gcfg, pcfg = PRESETS["G-Image"]
        p = init_projection("proj_graph", gcfg.hidden_dim, pcfg, 0)
        assert project(np.ones(64), "graph", p, pcfg).shape == (512,)

    def test_gcms_preset_is_three_layers(self):
        _, pcfg = PRESETS["G-GCMS"]
        p = init_projection("proj_chem", 128, pcfg, 0)
        assert [p[f"proj_chem.w{k}"].shape for k in range(3)] == [(128, 128)] * 3

    def test_zero_weights(self):
        pcfg = ProjectionConfig(2, 4)
        p = init_projection("proj_chem", 3, pcfg, 0)
        for k in range(2):
            p[f"proj_chem.w{k}"].data[:] = 0
        p["proj_chem.b1"].data[:] = [1, 2, 3, 4]
        np.testing.assert_array_equal(project(np.ones(3), "chem", p, pcfg).data, [1, 2, 3, 4])
        nob = ProjectionConfig(2, 4, bias=False)
        q = init_projection("proj_chem", 3, nob, 0)
        for k in range(2):
            q[f"proj_chem.w{k}"].data[:] = 0
        assert not project(np.ones(3), "chem", q, nob).data.any()

    def test_dim_mismatch(self):
        pcfg = ProjectionConfig(2, 4)
        p = init_projection("proj_graph", 3, pcfg, 0)
        with pytest.raises(DimMismatch):
            project(np.ones(5), "graph", p, pcfg)


class TestSpectrum:
    def test_floor_binning(self):
        s = grid_spectrum([(2.005, 1.0)], "H1")
        assert s.n_bins == 1000 and s.intensities[200] == 1.0

    def test_c13_bins(self):
        assert n_bins("C13") == 2200

    def test_overlap_and_drop(self):
        with pytest.warns(UserWarning):
            s = grid_spectrum([(1.001, 1.0), (1.009, 2.0), (12.0, 5.0)], "H1")
        assert s.intensities[100] == 3.0 and s.dropped == 1

    def test_empty(self):
        assert not grid_spectrum([], "H1").intensities.any()

    def test_negative(self):
        with pytest.raises(NegativeIntensity):
            grid_spectrum([(1.0, -1.0)])


class TestSurrogates:
    def test_zero_spectrum_gives_zero(self):
        enc = SpectrumSurrogate(16, "H1", seed=0)
        out = encode_modality(ModalityRecord("m", "spectrum", np.zeros(1000)), enc)
        assert out.shape == (16,) and not out.any()

    def test_spectrum_scale_free(self):
        enc = SpectrumSurrogate(16, "H1", seed=0)
        x = grid_spectrum([(1.0, 1.0), (7.2, 3.0)]).intensities
        a = enc.encode(ModalityRecord("m", "spectrum", x))
        b = enc.encode(ModalityRecord("m", "spectrum", 5 * x))
        np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_trigram_buckets(self):
        c = trigram_counts("CCCC")
        assert c.shape == (2048,) and c.sum() == 2

    def test_same_seed_same_output(self):
        rec = ModalityRecord("m", "string", "CC(=O)O")
        np.testing.assert_array_equal(StringSurrogate(8, seed=4).encode(rec), StringSurrogate(8, seed=4).encode(rec))
        assert not np.array_equal(StringSurrogate(8, seed=4).encode(rec), StringSurrogate(8, seed=5).encode(rec))

    def test_oracle_features_basic_counts(self):
        f = oracle_features(parse_smiles("C1CCCCC1O"))
        assert f[0] == 7

    def test_kind_mismatch(self):
        with pytest.raises(KindMismatch):
            OracleSurrogate(8).encode(ModalityRecord("m", "string", "CC"))


class TestStore:
    def test_round_trip(self, tmp_path, rng):
        m = rng.normal(size=(5, 3)).astype(np.float32)
        write_store(tmp_path / "e.acem", list("abcde"), m)
        for mmap in (False, True):
            st_ = EmbeddingStore.open(tmp_path / "e.acem", mmap=mmap)
            enc = PrecomputedStore(st_)
            np.testing.assert_array_equal(enc.encode(ModalityRecord("c", "embedding")), m[2])
            np.testing.assert_array_equal(st_.rows(["e", "a"]), m[[4, 0]])

    def test_missing_id(self, tmp_path):
        write_store(tmp_path / "e.acem", ["a"], np.zeros((1, 2)))
        with pytest.raises(MissingEmbedding):
            EmbeddingStore.open(tmp_path / "e.acem").row("zz")

    @pytest.mark.parametrize("damage", ["magic", "truncate", "ids"])
    def test_corrupt(self, tmp_path, damage):
        path = tmp_path / "e.acem"
        write_store(path, ["a", "b"], np.ones((2, 4)))
        raw = bytearray(path.read_bytes())
        if damage == "magic":
            raw[0:4] = b"XXXX"
            path.write_bytes(bytes(raw))
        elif damage == "truncate":
            path.write_bytes(bytes(raw[:-3]))
        else:
            (tmp_path / "e.acem.ids").write_text("a\n")
        with pytest.raises(CorruptStore):
            EmbeddingStore.open(path)


def test_frozen_encoder_unaffected_by_training():
    # chem encoders live outside the tape: an optimizer step on the graph side
    # leaves their outputs bit-identical
    enc = OracleSurrogate(16, seed=1)
    rec = ModalityRecord("m", "graph", parse_smiles("CCN"))
    before = enc.encode(rec).copy()
    cfg = GinConfig(2, 16)
    p = init_gin(cfg, 0)
    opt = T.AdamW(p, lr=0.1)
    for _ in range(3):
        opt.zero_grad()
        h = encode_batch(batch_graphs([rec.payload]), p, cfg)
        T.backward(T.tsum(h * T.Tensor(enc.encode(rec))))
        opt.step()
    np.testing.assert_array_equal(enc.encode(rec), before)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 9.999), st.floats(0, 10)), max_size=20))
def test_spectrum_keeps_total_intensity(peaks):
    s = grid_spectrum(peaks, "H1")
    assert s.intensities.sum() == pytest.approx(sum(i for _, i in peaks), rel=1e-5, abs=1e-4)
    assert (s.intensities >= 0).all()

import json

import numpy as np
import pytest

from actweave.asa_model import AsaModel, make_optimizers, train_stage1
from actweave.concept_discovery import ActionConcept, ActNode, ActTree
from actweave.corpus_io import (EmbeddingTable, PipelineConfig,
                                check_feature_coverage, load_act, load_corpus,
                                load_checkpoint, load_embeddings,
                                load_features, save_act, save_checkpoint)
from actweave.errors import SchemaError
from actweave.vo_extract import VOPair


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestCorpus:
    def test_basic(self, tmp_path):
        p = write(tmp_path / "c.jsonl", "\n".join([
            json.dumps({"image_id": "a", "description": "a man", "split": "train"}),
            json.dumps({"image_id": "b", "description": "a dog", "split": "test"}),
        ]))
        recs = load_corpus(p)
        assert [r.image_id for r in recs] == ["a", "b"]
        assert recs[1].split == "test"

    def test_blank_lines_skipped(self, tmp_path):
        p = write(tmp_path / "c.jsonl",
                  '\n{"image_id": "a", "description": "x", "split": "train"}\n\n')
        assert len(load_corpus(p)) == 1

    @pytest.mark.parametrize("line", [
        "{not json",
        '{"image_id": "a", "description": "x"}',
        '{"image_id": "", "description": "x", "split": "train"}',
        '{"image_id": "a", "description": " ", "split": "train"}',
        '{"image_id": "a", "description": "x", "split": "val"}',
    ])
    def test_malformed_line_reports_position(self, tmp_path, line):
        p = write(tmp_path / "c.jsonl",
                  '{"image_id": "ok", "description": "x", "split": "train"}\n'
                  + line + "\n")
        with pytest.raises(SchemaError) as exc:
            load_corpus(p)
        assert ":2" in str(exc.value)

    def test_empty_file_errors(self, tmp_path):
        with pytest.raises(SchemaError):
            load_corpus(write(tmp_path / "c.jsonl", "\n"))


class TestFeatures:
    def test_basic_and_dim_inference(self, tmp_path):
        p = write(tmp_path / "f.tsv", "a\t1.0\t2.0\t3.0\nb\t0\t-1\t0.5\n")
        t = load_features(p)
        assert t.dim == 3
        assert np.allclose(t.entries["b"], [0.0, -1.0, 0.5])

    def test_ragged_rejected(self, tmp_path):
        p = write(tmp_path / "f.tsv", "a\t1\t2\nb\t1\n")
        with pytest.raises(SchemaError):
            load_features(p)

    def test_non_numeric_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            load_features(write(tmp_path / "f.tsv", "a\t1\tx\n"))

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(SchemaError):
            load_features(write(tmp_path / "f.tsv", "a\t1\tnan\n"))

    def test_coverage_check(self, tmp_path):
        feats = load_features(write(tmp_path / "f.tsv", "a\t1\t2\n"))
        corpus = load_corpus(write(
            tmp_path / "c.jsonl",
            '{"image_id": "a", "description": "x", "split": "train"}\n'
            '{"image_id": "zz", "description": "y", "split": "train"}\n'))
        with pytest.raises(SchemaError) as exc:
            check_feature_coverage(corpus, feats)
        assert "zz" in str(exc.value)


class TestEmbeddings:
    def test_with_header(self, tmp_path):
        p = write(tmp_path / "e.vec", "2 3\nman 1 0 0\nDog 0 1 0\n")
        t = load_embeddings(p)
        assert t.dim == 3
        assert np.allclose(t.vector("dog"), [0, 1, 0])  # lowercased

    def test_without_header(self, tmp_path):
        t = load_embeddings(write(tmp_path / "e.vec", "man 1 0\ndog 0 1\n"))
        assert t.dim == 2

    def test_oov_deterministic_unit_norm(self, tmp_path):
        p = write(tmp_path / "e.vec", "man 1 0 0\n")
        t1 = load_embeddings(p, seed=5)
        t2 = load_embeddings(p, seed=5)
        v1, v2 = t1.vector("qwerty"), t2.vector("qwerty")
        assert np.array_equal(v1, v2)
        assert np.isclose(np.linalg.norm(v1), 1.0)
        t3 = load_embeddings(p, seed=6)
        assert not np.array_equal(v1, t3.vector("qwerty"))

    def test_oov_cached_identity(self):
        t = EmbeddingTable(dim=4, entries={})
        assert t.vector("w") is t.vector("w")


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert (cfg.d_img, cfg.d_w2v, cfg.d_text, cfg.d_alg) == (4096, 500, 1000, 500)
        assert (cfg.alpha_c, cfg.alpha_w) == (1.0, 0.01)
        assert (cfg.batch_size, cfg.c_nn, cfg.max_seq_len) == (96, 4, 6)
        assert (cfg.lr_encoder, cfg.lr_align) == (0.001, 0.001)

    def test_from_toml(self, tmp_path):
        p = write(tmp_path / "c.toml", "d_img = 8\nseed = 3\nalpha_w = 0.5\n")
        cfg = PipelineConfig.from_toml(p)
        assert (cfg.d_img, cfg.seed, cfg.alpha_w) == (8, 3, 0.5)

    def test_from_toml_unknown_key(self, tmp_path):
        with pytest.raises(SchemaError):
            PipelineConfig.from_toml(write(tmp_path / "c.toml", "nope = 1\n"))

    def test_overrides_typed(self):
        cfg = PipelineConfig().with_overrides(["batch_size=8", "alpha_w=0.2"])
        assert cfg.batch_size == 8 and isinstance(cfg.batch_size, int)
        assert cfg.alpha_w == 0.2

    def test_overrides_bad(self):
        with pytest.raises(SchemaError):
            PipelineConfig().with_overrides(["batch_size"])
        with pytest.raises(SchemaError):
            PipelineConfig().with_overrides(["nokey=1"])
        with pytest.raises(SchemaError):
            PipelineConfig().with_overrides(["batch_size=abc"])

    def test_validation(self):
        with pytest.raises(SchemaError):
            PipelineConfig(batch_size=0)
        with pytest.raises(SchemaError):
            PipelineConfig(alpha_c=0.0)
        with pytest.raises(SchemaError):
            PipelineConfig(visualness_threshold=1.5)


def leaf(verb, obj, images):
    c = ActionConcept(pair=VOPair(verb, obj), image_ids=set(images))
    return ActNode(name=(verb, obj), concept=c, images=set(images))


def inner(name, children):
    images = set()
    for ch in children:
        images |= ch.images
    return ActNode(name=name, children=children, images=images)


class TestActRoundTrip:
    def make_deep_tree(self):
        l1 = leaf("ride", "horse", {"i1", "i2"})
        l2 = leaf("ride", "bike", {"i3"})
        l3 = leaf("hold", "dish", {"i4"})
        l4 = leaf("hold", "pan", {"i5", "i6"})
        n1 = inner(("ride", "entity"), [l1, l2])
        n2 = inner(("hold", "container"), [l3, l4])
        mid = inner(("interact with", "entity"), [n1])
        root = inner(("interact with", "entity"), [mid, n2])
        return ActTree(root=root)

    def test_round_trip_deep(self, tmp_path):
        tree = self.make_deep_tree()
        p = tmp_path / "act.json"
        save_act(tree, p)
        loaded = load_act(p)
        orig = [(n.name, sorted(n.images), n.is_leaf) for n in tree.preorder()]
        back = [(n.name, sorted(n.images), n.is_leaf) for n in loaded.preorder()]
        assert orig == back
        for a, b in zip(tree.leaves(), loaded.leaves()):
            assert a.concept.pair == b.concept.pair

    def test_save_is_deterministic(self, tmp_path):
        tree = self.make_deep_tree()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_act(tree, p1)
        save_act(tree, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_check(self, tmp_path):
        p = tmp_path / "act.json"
        p.write_text('{"version": 99, "root": {}}')
        with pytest.raises(SchemaError):
            load_act(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "act.json"
        p.write_text("{{{")
        with pytest.raises(SchemaError):
            load_act(p)


def tiny_corpus_features(config, rng):
    from actweave.corpus_io import FeatureTable, ImagedDescription
    corpus = [ImagedDescription(f"im{i}", f"a man holds item{i}", "train")
              for i in range(6)]
    feats = FeatureTable(dim=config.d_img, entries={
        f"im{i}": rng.standard_normal(config.d_img) for i in range(6)})
    return corpus, feats


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, tiny_config):
        model = AsaModel.init(tiny_config)
        opts = make_optimizers(tiny_config)
        # give adam some real state
        grads = {k: np.full_like(v, 0.25) for k, v in model.params.items()}
        opts["encoder"].step(model.params, grads, ("enc.W", "enc.b"))
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, opts, p)
        model2, opts2 = load_checkpoint(p, tiny_config)
        for k in model.params:
            assert model2.params[k].dtype == np.float64
            assert np.array_equal(model.params[k], model2.params[k])
        assert opts2["encoder"].t == 1
        assert np.array_equal(opts["encoder"].m["enc.W"], opts2["encoder"].m["enc.W"])
        # and resaving reproduces the file byte for byte
        p2 = tmp_path / "m2.ckpt"
        save_checkpoint(model2, opts2, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_dim_mismatch(self, tmp_path, tiny_config):
        model = AsaModel.init(tiny_config)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, make_optimizers(tiny_config), p)
        bad = PipelineConfig(d_img=tiny_config.d_img + 1, d_w2v=2, d_text=4,
                             d_alg=5, batch_size=2, seed=11)
        with pytest.raises(SchemaError):
            load_checkpoint(p, bad)

    def test_truncated_file(self, tmp_path, tiny_config):
        model = AsaModel.init(tiny_config)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, make_optimizers(tiny_config), p)
        data = p.read_bytes()
        p.write_bytes(data[:len(data) - 16])
        with pytest.raises(SchemaError):
            load_checkpoint(p)
        p.write_bytes(data[:2])
        with pytest.raises(SchemaError):
            load_checkpoint(p)

    def test_resume_equals_uninterrupted(self, tmp_path, tiny_config, fake_embeddings):
        rng = np.random.default_rng(2)
        corpus, feats = tiny_corpus_features(tiny_config, rng)
        emb = fake_embeddings(tiny_config.d_w2v)

        model_a = AsaModel.init(tiny_config)
        model_a, opts_a, _ = train_stage1(
            corpus, feats, emb, model_a, tiny_config, n_steps=4)

        model_b = AsaModel.init(tiny_config)
        model_b, opts_b, _ = train_stage1(
            corpus, feats, emb, model_b, tiny_config, n_steps=2)
        p = tmp_path / "half.ckpt"
        save_checkpoint(model_b, opts_b, p)
        model_c, opts_c = load_checkpoint(p, tiny_config)
        model_c, _, _ = train_stage1(
            corpus, feats, emb, model_c, tiny_config,
            opt_states=opts_c, start_step=2, n_steps=2)

        for k in model_a.params:
            assert np.array_equal(model_a.params[k], model_c.params[k]), k

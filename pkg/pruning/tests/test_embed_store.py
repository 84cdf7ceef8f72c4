import struct
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from pruning.embed_store import (
    EmbeddingMatrix, ScoreArray, SelectionMask, gen_sphere_mixture, load_embeddings, load_scores,
    normalize_rows, read_mask, subset, write_embeddings, write_mask, write_scores,
)
from pruning.exceptions import DataFormatError, EmptySelectionError


class EmbeddingFileTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        m = EmbeddingMatrix(np.array([[1.5, -2.0, 0.25], [3.0, 4.0, 1e-8]], dtype=np.float32))
        path = self.dir / 'm.emb'
        write_embeddings(m, path)
        loaded = load_embeddings(path)
        self.assertEqual((loaded.rows, loaded.dim), (2, 3))
        self.assertFalse(loaded.normalized)
        self.assertEqual(loaded.data.dtype, np.float32)
        self.assertEqual(loaded.data.tobytes(), m.data.tobytes())

    def test_header_layout(self):
        path = self.dir / 'm.emb'
        write_embeddings(EmbeddingMatrix(np.ones((2, 3), dtype=np.float32)), path)
        raw = path.read_bytes()
        self.assertEqual(raw[:4], b'EMB1')
        self.assertEqual(struct.unpack('<Q', raw[4:12])[0], 2)
        self.assertEqual(struct.unpack('<I', raw[12:16])[0], 3)
        self.assertEqual(raw[16], 0x01)
        self.assertEqual(len(raw), 17 + 6 * 4)

    def test_bad_magic(self):
        path = self.dir / 'bad.emb'
        path.write_bytes(b'XXXX' + struct.pack('<QIB', 1, 1, 1) + struct.pack('<f', 1.0))
        with self.assertRaises(DataFormatError) as ctx:
            load_embeddings(path)
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_payload(self):
        path = self.dir / 'short.emb'
        payload = np.ones(5, dtype='<f4').tobytes()
        path.write_bytes(struct.pack('<4sQIB', b'EMB1', 2, 3, 1) + payload)
        with self.assertRaises(DataFormatError) as ctx:
            load_embeddings(path)
        self.assertIn('truncated', str(ctx.exception))
        self.assertEqual(ctx.exception.offset, 17 + 20)

    def test_zero_dim(self):
        path = self.dir / 'zero.emb'
        path.write_bytes(struct.pack('<4sQIB', b'EMB1', 2, 0, 1))
        with self.assertRaises(DataFormatError):
            load_embeddings(path)

    def test_nan_reports_offset(self):
        values = np.ones(6, dtype='<f4')
        values[4] = np.nan
        path = self.dir / 'nan.emb'
        path.write_bytes(struct.pack('<4sQIB', b'EMB1', 2, 3, 1) + values.tobytes())
        with self.assertRaises(DataFormatError) as ctx:
            load_embeddings(path)
        self.assertEqual(ctx.exception.offset, 17 + 16)

    def test_scores_round_trip(self):
        scores = ScoreArray(np.array([0.1, 0.3, -0.5], dtype=np.float32))
        path = self.dir / 's.scr'
        write_scores(scores, path)
        self.assertEqual(path.read_bytes()[:4], b'SCR1')
        self.assertEqual(load_scores(path).scores.tobytes(), scores.scores.tobytes())

    def test_mask_file(self):
        path = self.dir / 'm.mask'
        write_mask(SelectionMask(np.array([0, 4, 9])), path)
        self.assertEqual(path.read_text(), '0\n4\n9\n')
        self.assertEqual(read_mask(path, rows=10), SelectionMask(np.array([0, 4, 9])))
        with self.assertRaises(DataFormatError):
            read_mask(path, rows=5)

    def test_mask_file_rejects_blank_lines_and_disorder(self):
        path = self.dir / 'm.mask'
        path.write_text('0\n\n3\n')
        with self.assertRaises(DataFormatError):
            read_mask(path)
        path.write_text('3\n1\n')
        with self.assertRaises(DataFormatError):
            read_mask(path)


class NormalizeTest(SimpleTestCase):
    def test_three_four_five(self):
        out = normalize_rows(EmbeddingMatrix(np.array([[3.0, 4.0]])))
        self.assertTrue(out.normalized)
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        once = normalize_rows(EmbeddingMatrix(rng.standard_normal((50, 7))))
        twice = normalize_rows(once)
        self.assertLess(np.abs(once.data - twice.data).max(), 1e-7)

    def test_zero_row_names_index(self):
        with self.assertRaisesMessage(DataFormatError, 'row 1'):
            normalize_rows(EmbeddingMatrix(np.array([[1.0, 0.0], [0.0, 0.0]])))

    def test_threads_do_not_change_result(self):
        rng = np.random.default_rng(4)
        m = EmbeddingMatrix(rng.standard_normal((101, 5)))
        np.testing.assert_array_equal(normalize_rows(m, threads=1).data, normalize_rows(m, threads=4).data)

    def test_normalized_flag_is_checked(self):
        with self.assertRaises(DataFormatError):
            EmbeddingMatrix(np.array([[1.0, 1.0]]), normalized=True)


class SubsetTest(SimpleTestCase):
    def setUp(self):
        self.m = EmbeddingMatrix(np.arange(24, dtype=np.float64).reshape(8, 3))

    def test_all_ids_is_identity(self):
        np.testing.assert_array_equal(subset(self.m, SelectionMask.all(8)).data, self.m.data)

    def test_single_row(self):
        out = subset(EmbeddingMatrix(self.m.data[:3]), SelectionMask(np.array([1])))
        np.testing.assert_array_equal(out.data, self.m.data[1:2])

    def test_empty_mask(self):
        with self.assertRaises(EmptySelectionError):
            subset(self.m, SelectionMask(np.array([], dtype=np.int64)))

    def test_out_of_range(self):
        with self.assertRaises(DataFormatError):
            subset(self.m, SelectionMask(np.array([2, 8])))

    def test_composition(self):
        outer = SelectionMask(np.array([0, 2, 3, 5, 7]))
        local = SelectionMask(np.array([1, 3]))
        composed = outer.take(local.ids)
        np.testing.assert_array_equal(composed.ids, [2, 5])
        np.testing.assert_array_equal(subset(subset(self.m, outer), local).data, subset(self.m, composed).data)
        self.assertTrue(composed.issubset(outer))


class SphereMixtureTest(SimpleTestCase):
    def test_deterministic(self):
        a, la = gen_sphere_mixture(3, 16, [20, 5, 9], [0.2, 0.5, 1.0], seed=11)
        b, lb = gen_sphere_mixture(3, 16, [20, 5, 9], [0.2, 0.5, 1.0], seed=11)
        self.assertEqual(a.data.tobytes(), b.data.tobytes())
        np.testing.assert_array_equal(la, lb)

    def test_labels_and_norms(self):
        m, labels = gen_sphere_mixture(2, 8, [4, 6], [0.3, 0.3], seed=0)
        self.assertEqual(m.rows, 10)
        np.testing.assert_array_equal(labels, [0] * 4 + [1] * 6)
        np.testing.assert_allclose(np.linalg.norm(m.data, axis=1), 1.0, atol=1e-12)

    def test_zero_noise_limit(self):
        m, labels = gen_sphere_mixture(2, 8, [5, 5], [1e-9, 1e-9], seed=2)
        for j in range(2):
            rows = m.data[labels == j]
            self.assertLess(np.abs(rows - rows[0]).max(), 1e-8)

    def test_rejects_bad_parameters(self):
        with self.assertRaises(ValueError):
            gen_sphere_mixture(2, 8, [5, 0], [0.1, 0.1], seed=0)
        with self.assertRaises(ValueError):
            gen_sphere_mixture(1, 8, [5], [1.5], seed=0)

import contextlib
import io
import json
import os
import shutil
import tempfile
import unittest

from sqlalchemy import select

from cli import EXIT_OK, EXIT_USAGE, MANIFEST_FILE, main
from database import session_scope
from models import RunRecord


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(list(argv))
    return code, out.getvalue().splitlines()


def read_json(path):
    with open(path) as f:
        return json.load(f)


class TestCli(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.previous_env = os.environ.get('GCDM_ENV')
        os.environ['GCDM_ENV'] = 'testing'
        self.dataset = os.path.join(self.temp_dir, 'two-clique')
        code, _ = run('fixture', '--kind', 'two-clique', '--seed', '0', '--out', self.dataset, '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)
        if self.previous_env is None:
            os.environ.pop('GCDM_ENV', None)
        else:
            os.environ['GCDM_ENV'] = self.previous_env

    def path(self, *parts):
        return os.path.join(self.temp_dir, *parts)

    def test_missing_required_flag(self):
        with contextlib.redirect_stderr(io.StringIO()):
            code, _ = run('condense', '--out', self.path('x'))
        self.assertEqual(code, EXIT_USAGE)

    def test_version(self):
        with contextlib.redirect_stdout(io.StringIO()):
            self.assertEqual(main(['--version']), EXIT_OK)

    def test_condense_then_eval(self):
        out = self.path('condensed')
        code, lines = run('condense', '--dataset', self.dataset, '--out', out, '--ratio', '0.1',
                          '--variant', 'gcdm-x', '--epochs', '2', '--inner-steps', '2', '--adversary-steps', '1',
                          '--hidden', '8', '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        progress = [line.split('\t') for line in lines[:-1]]
        self.assertEqual([fields[0] for fields in progress], ['1', '2'])
        self.assertEqual(lines[-1], f"manifest\t{os.path.join(out, MANIFEST_FILE)}")

        manifest = read_json(os.path.join(out, MANIFEST_FILE))
        self.assertEqual(manifest['status'], 'completed')
        self.assertEqual(manifest['exit_code'], 0)
        self.assertEqual(manifest['details']['n_prime'], 4)
        self.assertEqual(manifest['config']['condense']['variant'], 'gcdm-x')
        self.assertEqual(manifest['seeds'], {'condense': 0})

        metrics = self.path('condensed', 'metrics.json')
        code, lines = run('eval', '--condensed', out, '--original', self.dataset, '--arch', 'gcn,mlp',
                          '--repeats', '2', '--epochs', '30', '--patience', '10', '--hidden', '16',
                          '--dropout', '0', '--out', metrics, '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual([line.split('\t')[0] for line in lines], ['gcn', 'mlp', 'metrics', 'manifest'])
        report = read_json(metrics)
        self.assertEqual([r['arch'] for r in report['results']], ['gcn', 'mlp'])
        self.assertEqual(report['results'][0]['seeds'], [0, 1])

        with session_scope() as session:
            records = session.execute(select(RunRecord).where(RunRecord.subcommand == 'eval')).scalars().all()
            self.assertTrue(any(r.status == 'completed' and r.seed == 0 for r in records))

    def test_whole_dataset_eval(self):
        metrics = self.path('whole', 'metrics.json')
        code, lines = run('eval', '--condensed', self.dataset, '--original', self.dataset, '--arch', 'sgc',
                          '--epochs', '30', '--patience', '10', '--out', metrics, '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        arch, mean, std = lines[0].split('\t')
        self.assertEqual(arch, 'sgc')
        self.assertEqual(std, '')
        self.assertTrue(os.path.isfile(self.path('whole', MANIFEST_FILE)))

    def test_config_error_writes_manifest(self):
        out = self.path('bad')
        code, lines = run('condense', '--dataset', self.dataset, '--out', out, '--ratio', '1.5',
                          '--log-level', 'CRITICAL')
        self.assertEqual(code, EXIT_USAGE)
        manifest = read_json(os.path.join(out, MANIFEST_FILE))
        self.assertEqual(manifest['status'], 'error')
        self.assertEqual(manifest['exit_code'], EXIT_USAGE)
        self.assertIn('ratio', manifest['error_message'])
        self.assertEqual(lines, [f"manifest\t{os.path.join(out, MANIFEST_FILE)}"])

    def test_config_file_and_flag_precedence(self):
        config_path = self.path('run.cfg')
        with open(config_path, 'w') as f:
            f.write("# condensation settings\ncondense.ratio = 0.1\ncondense.epochs = 1\n"
                    "condense.inner_steps = 1\ncondense.adversary_steps = 1\ncondense.hidden = 8\n")
        out = self.path('from-file')
        code, _ = run('condense', '--dataset', self.dataset, '--out', out, '--config', config_path,
                      '--variant', 'gcdm-x', '--epochs', '2', '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        cfg = read_json(os.path.join(out, MANIFEST_FILE))['config']['condense']
        self.assertEqual((cfg['ratio'], cfg['epochs'], cfg['hidden']), (0.1, 2, 8))

    def test_unknown_config_key(self):
        config_path = self.path('bad.cfg')
        with open(config_path, 'w') as f:
            f.write("condense.learning_rate = 0.1\n")
        code, _ = run('condense', '--dataset', self.dataset, '--out', self.path('x'), '--ratio', '0.1',
                      '--config', config_path, '--log-level', 'CRITICAL')
        self.assertEqual(code, EXIT_USAGE)

    def test_missing_dataset(self):
        code, _ = run('condense', '--dataset', self.path('nowhere'), '--out', self.path('x'), '--ratio', '0.1',
                      '--log-level', 'CRITICAL')
        self.assertEqual(code, EXIT_USAGE)

    def test_baseline_and_export(self):
        out = self.path('kcenter')
        code, _ = run('baseline', '--method', 'kcenter', '--dataset', self.dataset, '--ratio', '0.1',
                      '--space', 'features', '--out', out, '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(read_json(os.path.join(out, 'coreset_meta.json'))['indices']), 4)

        csv_path = self.path('emb', 'embeddings.csv')
        code, lines = run('export-embeddings', '--dataset', self.dataset, '--train', out, '--arch', 'gcn',
                          '--epochs', '10', '--patience', '10', '--hidden', '6', '--out', csv_path,
                          '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        with open(csv_path) as f:
            header = f.readline().strip().split(',')
        self.assertEqual(len(header), 2 + 6)
        self.assertEqual(read_json(self.path('emb', MANIFEST_FILE))['details']['width'], 6)

    def test_deterministic_runs_are_bitwise_reproducible(self):
        outputs = []
        for attempt in ('a', 'b'):
            out = self.path(f'condensed-{attempt}')
            code, _ = run('condense', '--dataset', self.dataset, '--out', out, '--ratio', '0.1',
                          '--variant', 'gcdm', '--epochs', '2', '--inner-steps', '2', '--adversary-steps', '1',
                          '--hidden', '8', '--adj-hidden', '4', '--seed', '3', '--deterministic',
                          '--log-level', 'ERROR')
            self.assertEqual(code, EXIT_OK)
            metrics = os.path.join(out, 'metrics.json')
            code, _ = run('eval', '--condensed', out, '--original', self.dataset, '--arch', 'gcn,sgc',
                          '--repeats', '2', '--epochs', '20', '--hidden', '8', '--deterministic',
                          '--out', metrics, '--log-level', 'ERROR')
            self.assertEqual(code, EXIT_OK)
            contents = {}
            for name in ('edges.tsv', 'features.bin', 'labels.txt'):
                with open(os.path.join(out, name), 'rb') as f:
                    contents[name] = f.read()
            contents['accuracies'] = [r['accuracies'] for r in read_json(metrics)['results']]
            outputs.append(contents)

            # 実行時のスレッド設定がマニフェストに残る
            runtime = read_json(os.path.join(out, MANIFEST_FILE))['config']['runtime']
            self.assertTrue(runtime['deterministic'])
            self.assertEqual(runtime['num_threads'], 1)
        self.assertEqual(outputs[0], outputs[1])

    def test_eval_with_short_epochs_and_default_patience(self):
        metrics = self.path('short', 'metrics.json')
        code, _ = run('eval', '--condensed', self.dataset, '--original', self.dataset, '--arch', 'mlp',
                      '--epochs', '5', '--out', metrics, '--log-level', 'ERROR')
        self.assertEqual(code, EXIT_OK)
        manifest = read_json(self.path('short', MANIFEST_FILE))
        self.assertEqual(manifest['config']['train']['patience'], 5)
        self.assertFalse(manifest['config']['runtime']['deterministic'])

    def test_malformed_meta_files_is_a_usage_error(self):
        broken = self.path('broken')
        shutil.copytree(self.dataset, broken)
        meta_path = os.path.join(broken, 'meta.json')
        meta = read_json(meta_path)
        meta['files'] = ['edges.tsv']
        with open(meta_path, 'w') as f:
            json.dump(meta, f)
        out = self.path('from-broken')
        code, _ = run('condense', '--dataset', broken, '--out', out, '--ratio', '0.1', '--log-level', 'CRITICAL')
        self.assertEqual(code, EXIT_USAGE)
        manifest = read_json(os.path.join(out, MANIFEST_FILE))
        self.assertEqual(manifest['status'], 'error')
        self.assertIn('meta.json', manifest['error_message'])

    def test_unknown_architecture(self):
        code, _ = run('eval', '--condensed', self.dataset, '--original', self.dataset, '--arch', 'gat',
                      '--out', self.path('m.json'), '--log-level', 'CRITICAL')
        self.assertEqual(code, EXIT_USAGE)


if __name__ == '__main__':
    unittest.main()

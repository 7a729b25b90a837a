"""コマンドラインのエントリポイント

サブコマンド: ``condense``、``eval``、``baseline``、``export-embeddings``、
``fixture``。標準出力には機械可読な行（タブ区切りの進捗と最後の
``manifest<TAB>path``）のみを出し、診断メッセージは標準エラーに出す。

終了コード: 0 成功、1 想定外の失敗、2 使い方・設定・データの誤り、3 数値的な失敗。
"""
import argparse
import json
import logging
import os
import sys
import time
import traceback
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional

from sqlalchemy.exc import SQLAlchemyError

from baselines import reference_embeddings, select
from condensation import condense, synthetic_node_count
from config import (
    BLAS_THREAD_VARS, VERSION, CondenseConfig, TrainConfig, get_config, load_config_file, resolve_config,
    runtime_settings,
)
from data_io import (
    export_embeddings, load_condensed, load_dataset, read_condense_meta, save_condensed, save_coreset, save_dataset,
    write_metrics,
)
from database import session_scope
from exceptions import ConfigError, CondenserError, CountMismatch, NumericError
from fixtures import make_fixture
from gnn_models import ARCHITECTURES
from models import RunRecord
from trainer import EvalTarget, cross_arch_eval, fit, spec_from_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

MANIFEST_FILE = 'run_manifest.json'


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """1 回の実行を再現するための情報（成功時も失敗時も書き出す）"""
    subcommand: str
    argv: List[str]
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    version: str = VERSION
    status: str = 'running'
    exit_code: Optional[int] = None
    error_message: Optional[str] = None
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)
    threads: Optional[str] = field(default_factory=lambda: os.environ.get('OMP_NUM_THREADS'))
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, path: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


def setup_logging(level: Optional[str] = None):
    """ログ設定（標準エラー出力。``level`` は LOG_LEVEL と設定の既定値より優先）"""
    name = (level or get_config().LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
        force=True,
    )


def _naive_utc(stamp: str) -> datetime:
    return datetime.fromisoformat(stamp).replace(tzinfo=None)


def _emit(*fields: Any):
    print('\t'.join(str(f) for f in fields), flush=True)


def _record_run(manifest: RunManifest, manifest_path: str):
    """マニフェストを RunRecord として保存する（履歴の保存失敗で実行は失敗させない）"""
    settings = get_config()
    if not settings.RECORD_RUNS:
        return
    seed = next(iter(manifest.seeds.values()), None)
    if isinstance(seed, list):
        # 複数回実行では最初のシードを記録
        seed = seed[0] if seed else None
    try:
        with session_scope(settings.DATABASE_URL) as session:
            session.add(RunRecord(
                run_id=manifest.run_id,
                subcommand=manifest.subcommand,
                dataset=manifest.inputs.get('dataset') or manifest.inputs.get('original'),
                output_path=next(iter(manifest.outputs.values()), None),
                manifest_path=manifest_path,
                seed=seed,
                config_json=json.dumps(manifest.config, sort_keys=True),
                timings_json=json.dumps(manifest.timings, sort_keys=True),
                started_at=_naive_utc(manifest.started_at),
                finished_at=_naive_utc(manifest.finished_at) if manifest.finished_at else None,
                duration_seconds=manifest.timings.get('total'),
                status=manifest.status,
                exit_code=manifest.exit_code,
                error_message=manifest.error_message,
            ))
    except SQLAlchemyError as e:
        logger.warning(f"実行履歴データベースに記録できません: {e}")


def _execute(args: argparse.Namespace, manifest_path: str, body: Callable[[RunManifest], None]) -> int:
    manifest = RunManifest(subcommand=args.command, argv=list(getattr(args, 'argv', [])))
    manifest.config = {'requested': {k: v for k, v in vars(args).items() if k not in ('func', 'argv')}}
    started = time.perf_counter()
    exit_code = EXIT_OK
    try:
        body(manifest)
        manifest.status = 'completed'
    except NumericError as e:
        exit_code = EXIT_NUMERIC
        manifest.status, manifest.error_message = 'error', str(e)
        logger.error(f"数値計算エラー: {e}")
    except CondenserError as e:
        exit_code = EXIT_USAGE
        manifest.status, manifest.error_message = 'error', str(e)
        logger.error(f"{type(e).__name__}: {e}")
    except Exception as e:
        exit_code = EXIT_FAILURE
        manifest.status, manifest.error_message = 'error', f"{type(e).__name__}: {e}"
        logger.error(f"想定外のエラー: {e}")
        logger.debug(traceback.format_exc())

    manifest.config['runtime'] = runtime_settings(get_config(deterministic=args.deterministic))
    manifest.exit_code = exit_code
    manifest.timings['total'] = time.perf_counter() - started
    manifest.finished_at = _now()
    try:
        manifest.write(manifest_path)
    except OSError as e:
        logger.error(f"マニフェストを書き込めません {manifest_path}: {e}")
        return exit_code or EXIT_FAILURE
    _record_run(manifest, manifest_path)
    _emit('manifest', manifest_path)
    return exit_code


def _file_values(args: argparse.Namespace) -> Dict[str, Dict[str, str]]:
    if not args.config:
        return {'condense': {}, 'train': {}}
    return load_config_file(args.config)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return resolve_config(TrainConfig, _file_values(args)['train'], {
        'epochs': args.epochs, 'lr': args.lr, 'weight_decay': args.weight_decay,
        'dropout': args.dropout, 'patience': args.patience, 'layers': args.layers,
        'hidden': args.hidden, 'seed': args.seed,
    })


def _check_compatible(train_ds, original):
    if train_ds.num_features != original.num_features or train_ds.num_classes != original.num_classes:
        raise CountMismatch(f"{train_ds.name} の特徴量数・クラス数 ({train_ds.num_features} / {train_ds.num_classes}) が "
                            f"{original.name} ({original.num_features} / {original.num_classes}) と一致しません")


def _load_training_data(path: str, original_path: str, original, layers: int):
    """学習用データを読み込む（元データ自身、縮約グラフ、またはコアセットのディレクトリ）"""
    if os.path.realpath(path) == os.path.realpath(original_path):
        return original
    if read_condense_meta(path) is None:
        train_ds = load_dataset(path)
    else:
        cg = load_condensed(path)
        if layers > cg.config.layers:
            logger.warning(f"評価モデルの層数 {layers} が縮約時の層数 {cg.config.layers} を超えています")
        train_ds = cg.as_dataset()
    _check_compatible(train_ds, original)
    return train_ds


# ------------------------------------------------------------------ commands

def cmd_condense(args: argparse.Namespace) -> int:
    def body(manifest: RunManifest):
        cfg = resolve_config(CondenseConfig, _file_values(args)['condense'], {
            'ratio': args.ratio, 'variant': args.variant, 'epochs': args.epochs,
            'inner_steps': args.inner_steps, 'adversary_steps': args.adversary_steps,
            'tau1': args.tau1, 'tau2': args.tau2, 'lr_feat': args.lr_feat, 'lr_adj': args.lr_adj,
            'lr_adversary': args.lr_adversary, 'layers': args.layers, 'hidden': args.hidden,
            'adj_hidden': args.adj_hidden, 'embed_arch': args.embed_arch, 'seed': args.seed,
            'reinit_adversary': args.reinit_adversary, 'binarize': args.binarize,
            'label_sampling': args.label_sampling,
        })
        manifest.config = {'condense': cfg.to_dict()}
        manifest.seeds = {'condense': cfg.seed}
        manifest.inputs = {'dataset': args.dataset}

        started = time.perf_counter()
        ds = load_dataset(args.dataset)
        manifest.timings['load'] = time.perf_counter() - started
        manifest.details['n_prime'] = synthetic_node_count(ds.num_nodes, cfg.ratio)

        started = time.perf_counter()
        cg = condense(ds, cfg, progress=lambda epoch, loss, ms: _emit(epoch, f"{loss:.9g}", f"{ms:.1f}"))
        manifest.timings['condense'] = time.perf_counter() - started

        save_condensed(cg, args.out)
        manifest.outputs = {'condensed': args.out}
        manifest.details.update({'final_loss': cg.final_loss, 'num_edges': cg.graph.num_undirected_edges})

    return _execute(args, os.path.join(args.out, MANIFEST_FILE), body)


def cmd_train_eval(args: argparse.Namespace) -> int:
    def body(manifest: RunManifest):
        cfg = _train_config(args)
        archs = [a.strip().lower() for a in args.arch.split(',') if a.strip()]
        unknown = [a for a in archs if a not in ARCHITECTURES]
        if not archs or unknown:
            raise ConfigError(f"不明なアーキテクチャです: {unknown}（{', '.join(ARCHITECTURES)} から指定）")
        if args.repeats < 1:
            raise ConfigError("--repeats は 1 以上で指定してください")
        manifest.config = {'train': cfg.to_dict(), 'archs': archs, 'repeats': args.repeats}
        manifest.seeds = {'train': [cfg.seed + r for r in range(args.repeats)]}
        manifest.inputs = {'condensed': args.condensed, 'original': args.original}

        started = time.perf_counter()
        original = load_dataset(args.original)
        train_ds = _load_training_data(args.condensed, args.original, original, cfg.layers)
        manifest.timings['load'] = time.perf_counter() - started

        report = cross_arch_eval(train_ds, original, archs, cfg, args.repeats)
        manifest.timings['train'] = report.train_seconds
        manifest.timings['eval'] = report.eval_seconds
        write_metrics(report, args.out, extra={
            'condensed': args.condensed, 'original': args.original,
            'config': cfg.to_dict(), 'repeats': args.repeats,
        })
        manifest.outputs = {'metrics': args.out}
        for result in report.results:
            _emit(result.arch, f"{result.mean:.2f}", '' if result.std is None else f"{result.std:.2f}")
        _emit('metrics', args.out)

    return _execute(args, os.path.join(os.path.dirname(os.path.abspath(args.out)), MANIFEST_FILE), body)


def cmd_baseline(args: argparse.Namespace) -> int:
    def body(manifest: RunManifest):
        if not 0 < args.ratio < 1:
            raise ConfigError(f"ratio は (0, 1) の範囲で指定してください: {args.ratio}")
        cfg = _train_config(args)
        manifest.config = {'method': args.method, 'ratio': args.ratio, 'space': args.space,
                           'train': cfg.to_dict()}
        manifest.seeds = {'baseline': cfg.seed}
        manifest.inputs = {'dataset': args.dataset}

        started = time.perf_counter()
        ds = load_dataset(args.dataset)
        manifest.timings['load'] = time.perf_counter() - started
        n_prime = synthetic_node_count(ds.num_nodes, args.ratio)
        manifest.details['n_prime'] = n_prime

        started = time.perf_counter()
        embeddings = None if args.method == 'random' else reference_embeddings(ds, cfg, args.space)
        manifest.timings['train'] = time.perf_counter() - started
        started = time.perf_counter()
        result = select(args.method, ds, n_prime, cfg.seed, embeddings)
        manifest.timings['select'] = time.perf_counter() - started

        save_coreset(result, args.out)
        manifest.outputs = {'coreset': args.out}
        manifest.details['num_edges'] = result.graph.num_undirected_edges

    return _execute(args, os.path.join(args.out, MANIFEST_FILE), body)


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    def body(manifest: RunManifest):
        cfg = _train_config(args)
        manifest.config = {'train': cfg.to_dict(), 'arch': args.arch}
        manifest.seeds = {'train': cfg.seed}
        manifest.inputs = {'dataset': args.dataset, 'train': args.train or args.dataset}

        original = load_dataset(args.dataset)
        train_ds = _load_training_data(args.train or args.dataset, args.dataset, original, cfg.layers)
        spec = spec_from_config(args.arch, cfg)
        fitted = fit(spec, train_ds.graph, train_ds.features, train_ds.labels,
                     EvalTarget.from_dataset(original, 'val'), cfg, train_mask=train_ds.splits.train)
        manifest.timings['train'] = fitted.seconds

        width = export_embeddings(fitted.params, spec, original.graph, original.features, original.labels, args.out)
        manifest.outputs = {'embeddings': args.out}
        manifest.details['width'] = width

    return _execute(args, os.path.join(os.path.dirname(os.path.abspath(args.out)), MANIFEST_FILE), body)


def cmd_fixture(args: argparse.Namespace) -> int:
    def body(manifest: RunManifest):
        manifest.config = {'kind': args.kind}
        manifest.seeds = {'fixture': args.seed}
        ds = make_fixture(args.kind, args.seed)
        save_dataset(ds, args.out)
        manifest.outputs = {'dataset': args.out}
        manifest.details.update({'num_nodes': ds.num_nodes, 'num_edges': ds.graph.num_undirected_edges})

    return _execute(args, os.path.join(args.out, MANIFEST_FILE), body)


# -------------------------------------------------------------------- parser

def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='flat key = value config file (condense.* / train.* keys)')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR (default: LOG_LEVEL)')
    parser.add_argument('--deterministic', action='store_true',
                        help='single-threaded, bitwise-reproducible run')


def _add_train_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('evaluation training')
    group.add_argument('--epochs', type=int)
    group.add_argument('--lr', type=float)
    group.add_argument('--weight-decay', type=float)
    group.add_argument('--dropout', type=float)
    group.add_argument('--patience', type=int)
    group.add_argument('--layers', type=int)
    group.add_argument('--hidden', type=int)
    group.add_argument('--seed', type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='gcdm', description='Graph condensation by receptive-field '
                                                              'distribution matching')
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('condense', help='condense a dataset')
    _add_common(p)
    p.add_argument('--dataset', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--ratio', type=float)
    p.add_argument('--variant', choices=('gcdm', 'gcdm-x'))
    p.add_argument('--epochs', type=int)
    p.add_argument('--inner-steps', type=int)
    p.add_argument('--adversary-steps', type=int)
    p.add_argument('--tau1', type=int)
    p.add_argument('--tau2', type=int)
    p.add_argument('--lr-feat', type=float)
    p.add_argument('--lr-adj', type=float)
    p.add_argument('--lr-adversary', type=float)
    p.add_argument('--layers', type=int)
    p.add_argument('--hidden', type=int)
    p.add_argument('--adj-hidden', type=int)
    p.add_argument('--embed-arch', choices=('gcn', 'sgc'))
    p.add_argument('--seed', type=int)
    p.add_argument('--label-sampling', choices=('quota', 'categorical'))
    p.add_argument('--binarize', action='store_const', const=True)
    p.add_argument('--no-reinit-adversary', dest='reinit_adversary', action='store_const', const=False)
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser('eval', help='train architectures on a condensed graph and test on the original')
    _add_common(p)
    p.add_argument('--condensed', required=True, help='condensed, coreset or (whole mode) original directory')
    p.add_argument('--original', required=True)
    p.add_argument('--arch', default='gcn', help='comma-separated: gcn,sgc,mlp,sage,appnp')
    p.add_argument('--repeats', type=int, default=1)
    p.add_argument('--out', required=True, help='metrics JSON path')
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser('baseline', help='coreset baseline')
    _add_common(p)
    p.add_argument('--method', required=True, choices=('random', 'herding', 'kcenter'))
    p.add_argument('--dataset', required=True)
    p.add_argument('--ratio', required=True, type=float)
    p.add_argument('--out', required=True)
    p.add_argument('--space', choices=('gcn', 'features'), default='gcn',
                   help='embedding space of herding / kcenter')
    _add_train_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('export-embeddings', help='write node embeddings of a trained model as CSV')
    _add_common(p)
    p.add_argument('--dataset', required=True, help='graph whose nodes are embedded')
    p.add_argument('--train', help='training data directory (default: --dataset)')
    p.add_argument('--arch', default='gcn', choices=('gcn', 'sgc', 'mlp', 'sage', 'appnp'))
    p.add_argument('--out', required=True, help='CSV path')
    _add_train_flags(p)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser('fixture', help='write a synthetic dataset')
    _add_common(p)
    p.add_argument('--kind', choices=('two-clique', 'random'), default='two-clique')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    args.argv = argv
    setup_logging(args.log_level)
    settings = get_config(deterministic=args.deterministic)
    if settings.NUM_THREADS and os.environ.get(BLAS_THREAD_VARS[0]) != str(settings.NUM_THREADS):
        # BLAS のスレッド数は numpy 読み込み時に決まる（main.py 経由で起動すれば設定される）
        logger.warning(f"BLAS スレッド数が {settings.NUM_THREADS} に固定されていません "
                       f"({BLAS_THREAD_VARS[0]}={os.environ.get(BLAS_THREAD_VARS[0])})")
    return args.func(args)

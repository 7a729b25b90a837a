import os
import typing
from dataclasses import dataclass, fields, asdict
from typing import Any, Dict, Optional

from exceptions import ConfigError
from validation import validate_condense_parameters, validate_train_parameters


VERSION = "0.1.0"

# 生成隣接行列のうちこの値未満の要素は削除する
ADJ_THRESHOLD = 0.5

# 評価学習の既定の早期終了猶予（epochs がこれより小さい場合は epochs に合わせる）
DEFAULT_PATIENCE = 100

# numpy 読み込み前に設定する必要がある BLAS のスレッド数変数
BLAS_THREAD_VARS = ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS')


class Config:
    """基本設定クラス"""
    # ログ設定
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')

    # スレッド設定（0 の場合は BLAS に任せる）
    NUM_THREADS = int(os.environ.get('GCDM_NUM_THREADS', 0))
    DETERMINISTIC = False

    # この節点数を超える密行列化は拒否する
    DENSIFY_CAP = int(os.environ.get('GCDM_DENSIFY_CAP', 10_000))

    # 実行履歴データベース設定
    DATABASE_URL = os.environ.get('DATABASE_URL') or 'sqlite:///' + os.path.join(os.getcwd(), 'gcdm_runs.db')
    RECORD_RUNS = os.environ.get('GCDM_RECORD_RUNS', '1') != '0'


class DevelopmentConfig(Config):
    """開発環境設定"""
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class DeterministicConfig(Config):
    """再現性重視の設定（シングルスレッドでビット単位で再現可能）"""
    NUM_THREADS = 1
    DETERMINISTIC = True


class TestingConfig(Config):
    """テスト環境設定"""
    DATABASE_URL = 'sqlite:///:memory:'
    LOG_LEVEL = 'WARNING'


config = {
    'development': DevelopmentConfig,
    'deterministic': DeterministicConfig,
    'testing': TestingConfig,
    'default': Config,
}


def get_config(name: Optional[str] = None, deterministic: bool = False):
    """環境名（既定は GCDM_ENV）から設定クラスを返す

    deterministic=True の場合は、その環境のデータベースやログ設定を保ったまま
    スレッド数を 1 に固定した派生クラスを返す。
    """
    name = name or os.environ.get('GCDM_ENV', 'default')
    try:
        settings = config[name]
    except KeyError:
        raise ConfigError(f"不明な設定環境です: {name}") from None
    if deterministic and not settings.DETERMINISTIC:
        settings = type(f"Deterministic{settings.__name__}", (settings,),
                        {'NUM_THREADS': DeterministicConfig.NUM_THREADS, 'DETERMINISTIC': True})
    return settings


def thread_environment(settings) -> Dict[str, str]:
    """設定に対応する BLAS スレッド環境変数（NUM_THREADS=0 の場合は空）"""
    if not settings.NUM_THREADS:
        return {}
    return {var: str(settings.NUM_THREADS) for var in BLAS_THREAD_VARS}


def runtime_settings(settings) -> Dict[str, Any]:
    """マニフェストに記録する実行時設定"""
    return {
        'environment': os.environ.get('GCDM_ENV', 'default'),
        'deterministic': bool(settings.DETERMINISTIC),
        'num_threads': settings.NUM_THREADS,
        'blas_threads': os.environ.get(BLAS_THREAD_VARS[0]),
    }


@dataclass
class CondenseConfig:
    """1 回の縮約実行のハイパーパラメータ

    フィールド名は CLI フラグに対応する。epochs は外側のエポック数、
    inner_steps と adversary_steps は各エポック内の合成グラフ更新回数と
    敵対的埋め込み更新回数、tau1/tau2 は合成グラフ更新における特徴量ブロックと
    構造ブロックの長さ。
    """
    ratio: float
    variant: str = 'gcdm'
    epochs: int = 150
    inner_steps: int = 10
    adversary_steps: int = 5
    tau1: int = 4
    tau2: int = 1
    lr_feat: float = 1e-2
    lr_adj: float = 1e-3
    lr_adversary: float = 1e-3
    layers: int = 2
    hidden: int = 256
    adj_hidden: int = 128
    embed_arch: Optional[str] = None
    seed: int = 0
    reinit_adversary: bool = True
    binarize: bool = False
    label_sampling: str = 'quota'

    def __post_init__(self):
        if self.embed_arch is None:
            # 構造学習版は SGC、グラフなし版は GCN を使う
            self.embed_arch = 'sgc' if self.variant == 'gcdm' else 'gcn'
        is_valid, error = validate_condense_parameters(
            ratio=self.ratio, variant=self.variant, epochs=self.epochs,
            inner_steps=self.inner_steps, adversary_steps=self.adversary_steps,
            tau1=self.tau1, tau2=self.tau2,
            rates=(self.lr_feat, self.lr_adj, self.lr_adversary),
            layers=self.layers, hidden=self.hidden, embed_arch=self.embed_arch,
            label_sampling=self.label_sampling, seed=self.seed,
        )
        if not is_valid:
            raise ConfigError(error)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainConfig:
    """評価モデル（縮約グラフ・コアセット・元グラフ）の学習設定

    patience を省略した場合は min(DEFAULT_PATIENCE, epochs) になる。
    """
    epochs: int = 600
    lr: float = 1e-2
    weight_decay: float = 5e-4
    dropout: float = 0.5
    patience: Optional[int] = None
    layers: int = 2
    hidden: int = 256
    appnp_alpha: float = 0.1
    appnp_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.patience is None and isinstance(self.epochs, int):
            self.patience = min(DEFAULT_PATIENCE, self.epochs)
        is_valid, error = validate_train_parameters(
            epochs=self.epochs, lr=self.lr, weight_decay=self.weight_decay,
            dropout=self.dropout, patience=self.patience, layers=self.layers,
            hidden=self.hidden, seed=self.seed,
        )
        if not is_valid:
            raise ConfigError(error)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {'condense': CondenseConfig, 'train': TrainConfig}


def _base_type(kind: Any) -> Any:
    # Optional[int] -> int
    args = [a for a in typing.get_args(kind) if a is not type(None)]
    return args[0] if typing.get_origin(kind) is typing.Union and len(args) == 1 else kind


def _coerce(raw: str, kind: Any, key: str) -> Any:
    kind = _base_type(kind)
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ('1', 'true', 'yes', 'on'):
            return True
        if lowered in ('0', 'false', 'no', 'off'):
            return False
        raise ConfigError(f"{key}: 真偽値で指定してください: {raw!r}")
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: 値を解釈できません: {raw!r}") from None
    return raw.strip()


def load_config_file(path: str) -> Dict[str, Dict[str, str]]:
    """``section.key = value`` 形式の設定ファイルを ``{section: {key: raw}}`` に変換する"""
    sections: Dict[str, Dict[str, str]] = {name: {} for name in _SECTIONS}
    try:
        with open(path, encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"設定ファイルを読み込めません {path}: {e}") from e

    for number, line in enumerate(lines, start=1):
        # コメントと空行は無視
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{number}: 'key = value' 形式ではありません")
        key, value = (part.strip() for part in line.split('=', 1))
        section, _, name = key.partition('.')
        if section not in _SECTIONS or not name:
            raise ConfigError(f"{path}:{number}: 不明なキーです: {key!r}")
        known = {f.name for f in fields(_SECTIONS[section])}
        if name not in known:
            raise ConfigError(f"{path}:{number}: 不明なキーです: {key!r}")
        sections[section][name] = value
    return sections


def resolve_config(cls, file_values: Optional[Dict[str, str]] = None,
                   cli_values: Optional[Dict[str, Any]] = None):
    """優先順位 CLI フラグ > 設定ファイル > 既定値 で ``cls`` を生成する

    ``cli_values`` の値が ``None`` の項目は「フラグ未指定」として扱う。
    """
    kinds = {f.name: f.type for f in fields(cls)}
    values: Dict[str, Any] = {}
    for key, raw in (file_values or {}).items():
        values[key] = _coerce(raw, kinds.get(key, str), f"{cls.__name__}.{key}")
    for key, value in (cli_values or {}).items():
        if value is not None:
            values[key] = value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e

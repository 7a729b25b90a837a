import os
import math
import hashlib
from typing import Iterable, Optional, Tuple

# データセットディレクトリに必須のファイル（meta.json での役割名をキーとする）
REQUIRED_DATASET_FILES = {
    'edges': 'edges.tsv',
    'features': 'features.bin',
    'labels': 'labels.txt',
    'split_train': 'split_train.txt',
    'split_val': 'split_val.txt',
    'split_test': 'split_test.txt',
}

VARIANTS = ('gcdm', 'gcdm-x')
EMBED_ARCHS = ('gcn', 'sgc')
LABEL_SAMPLING = ('quota', 'categorical')


def validate_dataset_dir(path: str) -> Tuple[bool, Optional[str]]:
    """
    データセットディレクトリの構成を検証する

    Args:
        path: データセットディレクトリのパス

    Returns:
        (is_valid, error_message)
    """
    if not os.path.isdir(path):
        return False, f"ディレクトリではありません: {path}"

    # メタデータの存在チェック
    if not os.path.isfile(os.path.join(path, 'meta.json')):
        return False, f"meta.json がありません: {path}"

    # データファイルの存在チェック
    missing = [name for name in REQUIRED_DATASET_FILES.values()
               if not os.path.isfile(os.path.join(path, name))]
    if missing:
        return False, f"必要なファイルがありません ({path}): {', '.join(missing)}"

    return True, None


def generate_file_hash(file_path: str) -> str:
    """ファイルのハッシュ値を生成（チェックサム検証用）"""
    hash_sha256 = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hash_sha256.update(chunk)
    return hash_sha256.hexdigest()


def _positive(rates: Iterable[float]) -> bool:
    return all(math.isfinite(r) and r > 0 for r in rates)


def validate_condense_parameters(ratio: float, variant: str, epochs: int, inner_steps: int,
                                 adversary_steps: int, tau1: int, tau2: int,
                                 rates: Tuple[float, ...], layers: int, hidden: int,
                                 embed_arch: str, label_sampling: str,
                                 seed: int = 0) -> Tuple[bool, Optional[str]]:
    """縮約のハイパーパラメータを検証する"""
    if not isinstance(ratio, (int, float)) or not 0 < ratio < 1:
        return False, f"ratio は (0, 1) の範囲で指定してください: {ratio!r}"

    if variant not in VARIANTS:
        return False, f"不明な variant です: {variant!r}（{', '.join(VARIANTS)} のいずれか）"

    # 反復回数と層の大きさ
    for name, value in (('epochs', epochs), ('inner_steps', inner_steps),
                        ('adversary_steps', adversary_steps), ('tau1', tau1), ('tau2', tau2),
                        ('layers', layers), ('hidden', hidden)):
        if not isinstance(value, int) or value < 1:
            return False, f"{name} は 1 以上の整数で指定してください: {value!r}"

    if not _positive(rates):
        return False, "学習率 (lr_feat, lr_adj, lr_adversary) は正の有限値で指定してください"

    if embed_arch not in EMBED_ARCHS:
        return False, f"不明な embed_arch です: {embed_arch!r}（{', '.join(EMBED_ARCHS)} のいずれか）"

    if label_sampling not in LABEL_SAMPLING:
        return False, f"不明な label_sampling です: {label_sampling!r}"

    if not isinstance(seed, int) or seed < 0:
        return False, f"seed は 0 以上の整数で指定してください: {seed!r}"

    return True, None


def validate_train_parameters(epochs: int, lr: float, weight_decay: float, dropout: float,
                              patience: int, layers: int, hidden: int,
                              seed: int = 0) -> Tuple[bool, Optional[str]]:
    """評価学習のハイパーパラメータを検証する"""
    if not isinstance(epochs, int) or epochs < 1:
        return False, f"epochs は 1 以上の整数で指定してください: {epochs!r}"

    if not isinstance(patience, int) or patience < 1 or patience > epochs:
        return False, f"patience は [1, epochs] の範囲で指定してください: {patience!r}"

    if not _positive((lr,)):
        return False, "lr は正の値で指定してください"

    if weight_decay < 0:
        return False, "weight_decay は 0 以上で指定してください"

    if not 0 <= dropout < 1:
        return False, f"dropout は [0, 1) の範囲で指定してください: {dropout!r}"

    if layers < 1 or hidden < 1:
        return False, "layers と hidden は 1 以上で指定してください"

    if not isinstance(seed, int) or seed < 0:
        return False, f"seed は 0 以上の整数で指定してください: {seed!r}"

    return True, None

"""
fracdiff 共用例外。

library 模組只 raise，不 print；CLI (fracdiff.py) 依例外類型決定 exit code。
"""

EXIT_OK = 0
EXIT_SPEC_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class FracDiffError(Exception):
    """所有 fracdiff 例外的共同基底。"""


class DomainError(FracDiffError, ValueError):
    """參數落在數學定義域之外（例如 s ∉ (0,1)、z ≤ 0）。"""


class ParameterError(FracDiffError, ValueError):
    """參數組合不合法（例如 k 不是 1/N、hierarchy 不巢狀）。"""


class SingularEvaluationError(FracDiffError):
    pass


class UnsupportedOrderError(FracDiffError):
    pass


class UnsupportedDomainError(FracDiffError):
    pass


class GeometryError(FracDiffError):
    """多邊形不是 simple polygon、或網格不 conforming。"""


class IndefiniteMatrixError(FracDiffError):
    pass


class ResourceError(FracDiffError):
    """問題大小超過上限（dense eig、monolithic tensor solve）。"""


class SpecError(FracDiffError):
    """study JSON 內容不合法。"""


class AccuracyError(FracDiffError):
    """數值積分 / 迭代求解沒有達到要求精度；estimate 帶回實際達到的值。"""

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ReferenceInconsistencyError(FracDiffError):
    """能量誤差平方為負（超過容許值），代表 reference pairing 不夠準。"""

    def __init__(self, message: str, value=None, level=None):
        super().__init__(message)
        self.value = value
        self.level = level


# CLI 分類：spec / 參數類 → 2，其餘數值類 → 3
SPEC_ERRORS = (SpecError, ParameterError, DomainError, UnsupportedDomainError, GeometryError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SPEC_ERRORS):
        return EXIT_SPEC_ERROR
    return EXIT_NUMERICAL_ERROR


def reason_code(exc: BaseException) -> str:
    """study row / ledger 用的失敗原因字串。"""
    if isinstance(exc, ReferenceInconsistencyError):
        return "reference_inconsistency"
    if isinstance(exc, ResourceError):
        return "resource"
    if isinstance(exc, AccuracyError):
        return "accuracy"
    if isinstance(exc, IndefiniteMatrixError):
        return "indefinite"
    if isinstance(exc, SPEC_ERRORS):
        return "spec"
    return "exception"

"""
Modelos de referência: regressão ridge (linear nas features codificadas) e os
dois preditores ingênuos (gasto do último ano e média anual da observação).

Todo preditor expõe ``predict_totals(X, records)``: custo total previsto por
paciente, em Euro. Os modelos aprendidos usam ``X``; os ingênuos, só as fichas.
"""
import logging
from dataclasses import dataclass
from typing import ClassVar, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import sparse

from custos.services.claims_data import N_CATEGORIES, ClaimsRecord
from custos.services.network import predict_total

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.1


class BaselineError(Exception): ...


@runtime_checkable
class CostPredictor(Protocol):
    kind: str
    supports_input_gradient: bool

    def predict_totals(self, X, records: Sequence[ClaimsRecord]) -> np.ndarray: ...


@dataclass(frozen=True)
class RidgeParameters:
    W: np.ndarray
    b: np.ndarray
    output_scale: float = 1.0

    NAMES: ClassVar[tuple[str, ...]] = ("W", "b")

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise BaselineError(f"formas incompatíveis: W {W.shape}, b {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise BaselineError("parâmetros da ridge contêm valores não finitos")
        if not np.isfinite(self.output_scale) or self.output_scale <= 0:
            raise BaselineError(f"output_scale inválido: {self.output_scale}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.W.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "RidgeParameters":
        return RidgeParameters(W=arrays["W"], b=arrays["b"], output_scale=self.output_scale)

    @classmethod
    def zeros(cls, d: int, n_outputs: int = N_CATEGORIES, output_scale: float = 1.0) -> "RidgeParameters":
        return cls(W=np.zeros((d, n_outputs)), b=np.zeros(n_outputs), output_scale=output_scale)


def ridge_forward(params: RidgeParameters, X) -> np.ndarray:
    """Previsão linear (n x C) em Euro."""
    if X.shape[1] != params.input_dim:
        raise BaselineError(f"dimensão de entrada incompatível: esperado d={params.input_dim}, recebido d={X.shape[1]}")
    return params.output_scale * (np.asarray(X @ params.W) + params.b)


def ridge_closed_form(X, y: np.ndarray, lambda_: float) -> np.ndarray:
    """(XᵀX + nλI)⁻¹Xᵀy, sem intercepto; referência para dados centrados."""
    X = X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=np.float64)
    n, d = X.shape
    return np.linalg.solve(X.T @ X + n * lambda_ * np.eye(d), X.T @ y)


@dataclass(frozen=True)
class RidgeModel:
    params: RidgeParameters
    lambda_: float = DEFAULT_LAMBDA

    kind: ClassVar[str] = "ridge"
    supports_input_gradient: ClassVar[bool] = True

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def predict(self, X) -> np.ndarray:
        if sparse.issparse(X) or np.ndim(X) == 2:
            return ridge_forward(self.params, X)
        return ridge_forward(self.params, np.asarray(X, dtype=np.float64)[None, :])[0]

    def predict_totals(self, X, records=None) -> np.ndarray:
        return np.atleast_1d(predict_total(self.predict(X)))

    def input_gradient(self, X, output_weights, columns=None) -> np.ndarray:
        """Constante: o gradiente de sum_c w_c y_c é output_scale * W w."""
        W = self.params.W if columns is None else self.params.W[np.asarray(columns, dtype=np.int64)]
        linha = self.params.output_scale * (W @ np.asarray(output_weights, dtype=np.float64))
        if np.ndim(X) == 1 and not sparse.issparse(X):
            return linha.copy()
        return np.tile(linha, (X.shape[0], 1))


def _exigir_custos(records: Sequence[ClaimsRecord], nome: str):
    if records is None:
        raise BaselineError(f"{nome} precisa das fichas para prever")
    sem_custos = sum(1 for f in records if not f.costs_available)
    if sem_custos:
        raise BaselineError(f"{nome} indisponível: {sem_custos} fichas sem eventos de custo")


@dataclass(frozen=True)
class LastYearBaseline:
    """Prevê o gasto total do último ano da observação."""

    kind: ClassVar[str] = "last_year"
    supports_input_gradient: ClassVar[bool] = False

    def predict_totals(self, X, records: Sequence[ClaimsRecord]) -> np.ndarray:
        _exigir_custos(records, "baseline do último ano")
        return np.array([f.last_year_cost for f in records], dtype=np.float64)


@dataclass(frozen=True)
class MeanPriorBaseline:
    """Prevê a média anual dos gastos da observação."""

    kind: ClassVar[str] = "mean_prior"
    supports_input_gradient: ClassVar[bool] = False

    def predict_totals(self, X, records: Sequence[ClaimsRecord]) -> np.ndarray:
        _exigir_custos(records, "baseline da média anterior")
        return np.array([f.mean_prior_cost for f in records], dtype=np.float64)


@dataclass(frozen=True)
class OracleModel:
    """Usa os alvos verdadeiros como previsão; linha de controle da avaliação."""

    kind: ClassVar[str] = "oracle"
    supports_input_gradient: ClassVar[bool] = False

    def predict_totals(self, X, records: Sequence[ClaimsRecord]) -> np.ndarray:
        if any(f.target is None for f in records):
            raise BaselineError("oráculo exige alvo em todas as fichas")
        return np.array([f.target.total for f in records], dtype=np.float64)

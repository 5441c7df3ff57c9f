"""
Atribuição por gradientes integrados.

IG_i = (x_i - x'_i) * (1/m) * sum_{k=1..m} dF/dx_i (x' + (k/m)(x - x')), com F a
previsão escalar escolhida (custo total ou uma categoria). Só as colunas onde
x ou a linha de base são não nulos entram no cálculo; nas demais o caminho é
constante em zero e a atribuição é nula.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from custos.services.claims_data import COST_CATEGORIES, QUARTERS_PER_YEAR, ClaimsRecord
from custos.services.evaluation import ChangeLabel, label_change
from custos.services.network import total_cost_weights
from custos.services.vocab_encoder import CodeVocabulary, SparseFeatureVector, encode_many

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 300
TOTAL_COST = "total_cost"
COHORTS = {
    "all": None,
    "increasers": ChangeLabel.INCREASING,
    "decreasers": ChangeLabel.DECREASING,
    "stable": ChangeLabel.STABLE,
}


class AttributionError(Exception): ...


@dataclass(frozen=True)
class AttributionConfig:
    steps: int = DEFAULT_STEPS
    baseline: np.ndarray | None = None
    target: str = TOTAL_COST
    normalization: Literal["patients", "occurrences"] = "patients"

    def __post_init__(self):
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 1:
            raise AttributionError(f"steps deve ser inteiro positivo: {self.steps}")
        if self.target != TOTAL_COST and self.target not in COST_CATEGORIES:
            raise AttributionError(f"alvo de atribuição desconhecido: {self.target}")
        if self.normalization not in ("patients", "occurrences"):
            raise AttributionError(f"normalização desconhecida: {self.normalization}")

    def output_weights(self) -> np.ndarray:
        if self.target == TOTAL_COST:
            return total_cost_weights()
        pesos = np.zeros(len(COST_CATEGORIES))
        pesos[COST_CATEGORIES.index(self.target)] = 1.0
        return pesos


@dataclass(frozen=True)
class FeatureAttribution:
    """Atribuição esparsa: valores só nas colunas avaliadas (suporte de x e da base)."""

    dimension: int
    indices: np.ndarray
    values: np.ndarray

    def to_dense(self) -> np.ndarray:
        denso = np.zeros(self.dimension)
        denso[self.indices] = self.values
        return denso

    @property
    def total(self) -> float:
        return float(np.sum(self.values))


def _vetor(x, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(índices, valores) dos não nulos de x."""
    if isinstance(x, SparseFeatureVector):
        if x.dimension != d:
            raise AttributionError(f"dimensão incompatível: esperado d={d}, recebido d={x.dimension}")
        return x.indices, x.values
    if sparse.issparse(x):
        linha = sparse.csr_matrix(x)
        if linha.shape != (1, d):
            raise AttributionError(f"esperada uma linha de dimensão {d}, recebido {linha.shape}")
        linha.sort_indices()
        return linha.indices.astype(np.int64), linha.data.astype(np.float64)
    denso = np.asarray(x, dtype=np.float64).ravel()
    if denso.size != d:
        raise AttributionError(f"dimensão incompatível: esperado d={d}, recebido d={denso.size}")
    indices = np.flatnonzero(denso)
    return indices, denso[indices]


def integrated_gradients(model, x, config: AttributionConfig = AttributionConfig()) -> FeatureAttribution:
    """Gradientes integrados por soma de Riemann à direita com ``config.steps`` pontos."""
    if not getattr(model, "supports_input_gradient", False):
        raise AttributionError(f"atribuição não suportada para o modelo '{getattr(model, 'kind', type(model).__name__)}'")
    d = model.input_dim
    indices_x, valores_x = _vetor(x, d)

    if config.baseline is None:
        colunas = indices_x
        alvo = valores_x
        base = np.zeros_like(alvo)
    else:
        linha_base = np.asarray(config.baseline, dtype=np.float64).ravel()
        if linha_base.size != d:
            raise AttributionError(f"linha de base com dimensão {linha_base.size}, esperado {d}")
        colunas = np.union1d(indices_x, np.flatnonzero(linha_base)).astype(np.int64)
        alvo = np.zeros(colunas.size)
        alvo[np.searchsorted(colunas, indices_x)] = valores_x
        base = linha_base[colunas]

    if colunas.size == 0:
        return FeatureAttribution(d, colunas, np.zeros(0))

    m = config.steps
    fracoes = np.arange(1, m + 1, dtype=np.float64) / m
    caminho = base[None, :] + fracoes[:, None] * (alvo - base)[None, :]
    gradientes = np.asarray(model.input_gradient(caminho, config.output_weights(), columns=colunas))
    ig = (alvo - base) * gradientes.mean(axis=0)
    return FeatureAttribution(d, colunas, ig)


def select_cohort(records: Sequence[ClaimsRecord], cohort: str, threshold: float = 100.0, offset: float = 10.0):
    """Filtra as fichas pela mudança real entre o último ano e o alvo."""
    if cohort not in COHORTS:
        raise AttributionError(f"coorte desconhecida: {cohort} (opções: {sorted(COHORTS)})")
    rotulo = COHORTS[cohort]
    if rotulo is None:
        return list(records)
    selecionadas = []
    for ficha in records:
        if ficha.target is None or not ficha.costs_available:
            raise AttributionError(f"ficha {ficha.patient_id} sem alvo ou custos anteriores para definir a coorte")
        if label_change(ficha.last_year_cost, ficha.target.total, threshold, offset) == rotulo:
            selecionadas.append(ficha)
    logger.info("Coorte '%s': %s de %s fichas", cohort, len(selecionadas), len(records))
    return selecionadas


@dataclass
class AttributionReport:
    quarters: int
    n_patients: int
    features: pd.DataFrame
    codes: pd.DataFrame
    config: AttributionConfig = field(default_factory=AttributionConfig)

    def top(self, k: int = 10) -> pd.DataFrame:
        return self.codes.head(k)

    def rank_of(self, kind: str, code: str) -> int | None:
        linha = self.codes[(self.codes["kind"] == kind) & (self.codes["code"] == code)]
        return int(linha["rank"].iloc[0]) if len(linha) else None


def cohort_attribution(
    model,
    records: Sequence[ClaimsRecord],
    vocab: CodeVocabulary,
    config: AttributionConfig = AttributionConfig(),
) -> AttributionReport:
    """
    IG médio por coluna sobre a coorte, normalizado pelo número de pacientes com a
    coluna não nula (ou pelo número de ocorrências), e somado por código ao longo
    dos trimestres. Colunas nunca presentes na coorte ficam fora do relatório.
    """
    if not records:
        raise AttributionError("coorte vazia")
    trimestres = {f.quarters for f in records}
    if len(trimestres) != 1:
        raise AttributionError(f"fichas com observações de tamanhos diferentes: {sorted(trimestres)}")
    T = trimestres.pop()
    X = encode_many(records, vocab, T)
    n, d = X.shape

    soma_ig = np.zeros(d)
    for i in range(n):
        atribuicao = integrated_gradients(model, X[i], config)
        soma_ig[atribuicao.indices] += atribuicao.values

    presentes = np.asarray((X != 0).sum(axis=0)).ravel()
    if config.normalization == "patients":
        denominador = presentes.astype(np.float64)
    else:
        ocorrencias = np.asarray(X.sum(axis=0)).ravel()
        numerica = (np.arange(d) % vocab.block_width) >= vocab.size
        denominador = np.where(numerica, presentes, ocorrencias).astype(np.float64)

    colunas = np.flatnonzero(presentes > 0)
    media = soma_ig[colunas] / n
    rotulos = vocab.labels()
    quarter, j = np.divmod(colunas, vocab.block_width)
    features = pd.DataFrame({
        "column": colunas,
        "quarter": quarter,
        "kind": [rotulos[k][0] for k in j],
        "code": [rotulos[k][1] for k in j],
        "mean_ig": media,
        "nonzero_count": presentes[colunas],
        "normalized_ig": media / denominador[colunas],
    })

    codes = (
        features.groupby(["kind", "code"], sort=True, as_index=False)
        .agg(mean_ig=("mean_ig", "sum"), nonzero_count=("nonzero_count", "sum"), normalized_ig=("normalized_ig", "sum"))
        .sort_values(["normalized_ig", "kind", "code"], ascending=[False, True, True], kind="mergesort")
        .reset_index(drop=True)
    )
    codes["rank"] = np.arange(1, len(codes) + 1)
    logger.info("Atribuição sobre %s pacientes: %s colunas presentes, %s códigos", n, len(colunas), len(codes))
    return AttributionReport(quarters=T, n_patients=n, features=features, codes=codes, config=config)


def temporal_importance(report: AttributionReport, quarters: int | None = None) -> np.ndarray:
    """Soma do IG normalizado das colunas de cada trimestre."""
    T = report.quarters if quarters is None else quarters
    if len(report.features) and report.features["quarter"].max() >= T:
        raise AttributionError(f"relatório com trimestres além de T={T}")
    return np.bincount(
        report.features["quarter"].to_numpy(dtype=np.int64),
        weights=report.features["normalized_ig"].to_numpy(dtype=np.float64),
        minlength=T,
    )


def yearly_importance(series: np.ndarray) -> np.ndarray:
    """Agrega a série trimestral em anos (ano 0 = mais antigo)."""
    series = np.asarray(series, dtype=np.float64)
    if series.size % QUARTERS_PER_YEAR:
        raise AttributionError(f"série de {series.size} trimestres não forma anos completos")
    return series.reshape(-1, QUARTERS_PER_YEAR).sum(axis=1)


def write_attribution(report: AttributionReport, directory: str | Path, model_name: str) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    caminhos = {
        "codes": directory / "attribution_codes.csv",
        "features": directory / "attribution_features.csv",
        "temporal": directory / "temporal_importance.csv",
        "yearly": directory / "yearly_importance.csv",
    }
    report.codes[["kind", "code", "mean_ig", "nonzero_count", "normalized_ig", "rank"]].to_csv(caminhos["codes"], index=False)
    report.features.to_csv(caminhos["features"], index=False)
    serie = temporal_importance(report)
    pd.DataFrame({"quarter": np.arange(serie.size), "importance": serie, "model_name": model_name}).to_csv(
        caminhos["temporal"], index=False
    )
    anual = yearly_importance(serie)
    pd.DataFrame({"year": np.arange(anual.size), "importance": anual, "model_name": model_name}).to_csv(
        caminhos["yearly"], index=False
    )
    return caminhos

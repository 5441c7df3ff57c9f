"""
Métricas de avaliação sobre o custo total (sem auxílio-doença), erro por faixa de
custo e análise de mudança de custo com curvas PR/ROC.

``mape`` aqui é o erro absoluto médio em Euro, não percentual.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import pearsonr, spearmanr
from sklearn.metrics import average_precision_score, precision_recall_curve, roc_auc_score
from sklearn.metrics import roc_curve as sk_roc_curve

from custos.services.claims_data import ClaimsRecord

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 100.0
DEFAULT_OFFSET = 10.0
DEFAULT_BIN_EDGES = tuple(10.0 ** (k / 2) for k in range(13))

METRIC_COLUMNS = ("pearson_r", "spearman_rho", "mape", "r_squared", "cpm")

ROW_LAST_YEAR = "Spendings in last year"
ROW_MEAN_PRIOR = "Mean of previous spendings"
ROW_RIDGE = "Ridge regression"
ROW_NETWORK = "Neural network"
ROW_RIDGE_ENSEMBLE = "Ridge regression (ensemble)"
ROW_NETWORK_ENSEMBLE = "Neural network (ensemble)"
ROW_ORACLE = "Oracle (true costs)"
TABLE_ROWS = (ROW_LAST_YEAR, ROW_MEAN_PRIOR, ROW_RIDGE, ROW_NETWORK, ROW_RIDGE_ENSEMBLE, ROW_NETWORK_ENSEMBLE)


class EvaluationError(Exception): ...


def _pares(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise EvaluationError(f"tamanhos diferentes: y={y.size}, yhat={yhat.size}")
    if y.size < 2:
        raise EvaluationError("são necessários pelo menos 2 pacientes")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise EvaluationError("valores não finitos em y ou yhat")
    return y, yhat


def _correlacao(a: np.ndarray, b: np.ndarray, estatistica) -> float:
    if np.ptp(a) == 0:
        raise EvaluationError("correlação indefinida: y constante")
    if np.ptp(b) == 0:
        logger.warning("Previsão constante; correlação reportada como 0")
        return 0.0
    return max(-1.0, min(1.0, float(estatistica(a, b).statistic)))


def pearson(y, yhat) -> float:
    y, yhat = _pares(y, yhat)
    return _correlacao(y, yhat, pearsonr)


def spearman(y, yhat) -> float:
    """Pearson sobre postos médios (empates recebem a média dos postos)."""
    y, yhat = _pares(y, yhat)
    return _correlacao(y, yhat, spearmanr)


def mape(y, yhat) -> float:
    y, yhat = _pares(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def r_squared(y, yhat) -> float:
    y, yhat = _pares(y, yhat)
    total = float(np.sum((y - y.mean()) ** 2))
    if total == 0:
        raise EvaluationError("r² indefinido: y constante")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / total


def cpm(y, yhat) -> float:
    y, yhat = _pares(y, yhat)
    total = float(np.sum(np.abs(y - y.mean())))
    if total == 0:
        raise EvaluationError("cpm indefinido: y constante")
    return 1.0 - float(np.sum(np.abs(y - yhat))) / total


def all_metrics(y, yhat) -> dict[str, float]:
    return {
        "pearson_r": pearson(y, yhat),
        "spearman_rho": spearman(y, yhat),
        "mape": mape(y, yhat),
        "r_squared": r_squared(y, yhat),
        "cpm": cpm(y, yhat),
    }


class ChangeLabel(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    STABLE = "stable"


def fold_change(last_year_cost, future_cost, offset: float = DEFAULT_OFFSET):
    last = np.asarray(last_year_cost, dtype=np.float64)
    future = np.asarray(future_cost, dtype=np.float64)
    if np.any(last < 0) or np.any(future < 0):
        raise EvaluationError("custos precisam ser não negativos")
    if offset <= 0:
        raise EvaluationError(f"offset deve ser positivo: {offset}")
    return (future + offset) / (last + offset)


def label_change(
    last_year_cost: float,
    future_cost: float,
    threshold: float = DEFAULT_THRESHOLD,
    offset: float = DEFAULT_OFFSET,
) -> ChangeLabel:
    fc = float(fold_change(last_year_cost, future_cost, offset))
    if fc > threshold:
        return ChangeLabel.INCREASING
    if fc < 1.0 / threshold:
        return ChangeLabel.DECREASING
    return ChangeLabel.STABLE


def label_changes(last_year_costs, future_costs, threshold=DEFAULT_THRESHOLD, offset=DEFAULT_OFFSET) -> np.ndarray:
    """Versão vetorizada; retorna um array de strings com os valores de ChangeLabel."""
    fc = fold_change(last_year_costs, future_costs, offset)
    rotulos = np.full(fc.shape, ChangeLabel.STABLE.value, dtype=object)
    rotulos[fc > threshold] = ChangeLabel.INCREASING.value
    rotulos[fc < 1.0 / threshold] = ChangeLabel.DECREASING.value
    return rotulos


def change_scores(predicted_totals, last_year_costs, direction: str, offset: float = DEFAULT_OFFSET) -> np.ndarray:
    """
    Escore de pertencimento à coorte: mudança prevista (ŷ + offset)/(último + offset)
    para aumento, o inverso para redução. Previsões negativas contam como zero.
    """
    previsto = np.maximum(np.asarray(predicted_totals, dtype=np.float64), 0.0)
    razao = fold_change(last_year_costs, previsto, offset)
    if direction == "increase":
        return razao
    if direction == "decrease":
        return 1.0 / razao
    raise EvaluationError(f"direção desconhecida: {direction}")


def _rotulados(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise EvaluationError(f"tamanhos diferentes: scores={scores.size}, labels={labels.size}")
    if not labels.any():
        raise EvaluationError("curva indefinida: nenhum positivo")
    return scores, labels


def pr_curve(scores, labels) -> tuple[pd.DataFrame, float]:
    """
    Curva precisão-revocação, um ponto por escore distinto em ordem decrescente.
    A área é a precisão média, soma em degraus sum (R_k - R_{k-1}) * P_k.
    """
    scores, labels = _rotulados(scores, labels)
    precisao, revocacao, limiares = precision_recall_curve(labels, scores, drop_intermediate=False)
    # o último ponto de precision_recall_curve é o (P=1, R=0) sem limiar
    curva = pd.DataFrame({
        "threshold": limiares[::-1],
        "precision": precisao[-2::-1],
        "recall": revocacao[-2::-1],
    })
    return curva, float(average_precision_score(labels, scores))


def roc_curve(scores, labels) -> tuple[pd.DataFrame, float]:
    """Curva ROC a partir de (0, 0); área pela regra do trapézio."""
    scores, labels = _rotulados(scores, labels)
    if labels.all():
        raise EvaluationError("curva ROC indefinida: nenhum negativo")
    fpr, tpr, limiares = sk_roc_curve(labels, scores, drop_intermediate=False)
    curva = pd.DataFrame({"threshold": limiares, "fpr": fpr, "tpr": tpr})
    return curva, float(roc_auc_score(labels, scores))


def _faixas(y: np.ndarray, edges) -> tuple[np.ndarray, np.ndarray]:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise EvaluationError("limites das faixas precisam ser estritamente crescentes")
    indice = np.searchsorted(edges, y, side="right") - 1
    return np.clip(indice, 0, edges.size - 2), edges


def error_by_cost(y, yhat, edges=DEFAULT_BIN_EDGES, reference=None) -> pd.DataFrame:
    """
    Erro absoluto médio por faixa do custo verdadeiro. Custos abaixo do primeiro
    limite caem na primeira faixa e acima do último, na última. Com
    ``reference`` inclui o erro do modelo de referência e a diferença pareada.
    """
    y, yhat = _pares(y, yhat)
    indice, edges = _faixas(y, edges)
    erro = np.abs(y - yhat)
    erro_ref = None
    if reference is not None:
        _, referencia = _pares(y, reference)
        erro_ref = np.abs(y - referencia)
    linhas = []
    for k in range(edges.size - 1):
        membros = indice == k
        n = int(membros.sum())
        linha = {
            "bin_low": edges[k],
            "bin_high": edges[k + 1],
            "count": n,
            "mean_abs_error": float(erro[membros].mean()) if n else math.nan,
        }
        if erro_ref is not None:
            linha["reference_mean_abs_error"] = float(erro_ref[membros].mean()) if n else math.nan
            linha["difference"] = float((erro[membros] - erro_ref[membros]).mean()) if n else math.nan
        linhas.append(linha)
    return pd.DataFrame(linhas)


def cost_histogram(y, edges=DEFAULT_BIN_EDGES) -> pd.DataFrame:
    y = np.asarray(y, dtype=np.float64).ravel()
    indice, edges = _faixas(y, edges)
    contagem = np.bincount(indice, minlength=edges.size - 1)
    return pd.DataFrame({"bin_low": edges[:-1], "bin_high": edges[1:], "count": contagem})


def filter_eligible(records: Sequence[ClaimsRecord]) -> list[ClaimsRecord]:
    elegiveis = [f for f in records if f.alive_or_insured]
    if not elegiveis:
        raise EvaluationError("conjunto de avaliação vazio")
    descartados = len(records) - len(elegiveis)
    if descartados:
        logger.info("Descartadas %s fichas inelegíveis da avaliação", descartados)
    return elegiveis


def _sem_nan(valor):
    if isinstance(valor, float) and not math.isfinite(valor):
        return None
    if isinstance(valor, dict):
        return {k: _sem_nan(v) for k, v in valor.items()}
    if isinstance(valor, (list, tuple)):
        return [_sem_nan(v) for v in valor]
    if isinstance(valor, np.generic):
        return _sem_nan(valor.item())
    return valor


@dataclass
class ChangeReport:
    threshold: float
    offset: float
    labels: np.ndarray
    auprc_increase: float | None = None
    auprc_decrease: float | None = None
    auroc_increase: float | None = None
    auroc_decrease: float | None = None
    pr_curves: dict = field(default_factory=dict)
    roc_curves: dict = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        return {rotulo.value: int(np.sum(self.labels == rotulo.value)) for rotulo in ChangeLabel}

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "offset": self.offset,
            "counts": self.counts(),
            "auprc_increase": self.auprc_increase,
            "auprc_decrease": self.auprc_decrease,
            "auroc_increase": self.auroc_increase,
            "auroc_decrease": self.auroc_decrease,
        }


def analyze_changes(
    predicted_totals,
    last_year_costs,
    future_totals,
    threshold: float = DEFAULT_THRESHOLD,
    offset: float = DEFAULT_OFFSET,
) -> ChangeReport:
    """
    Rotula cada paciente pela mudança real e mede quão bem o escore previsto
    separa cada coorte de todos os demais pacientes. Direção sem positivos fica
    como indisponível (None).
    """
    rotulos = label_changes(last_year_costs, future_totals, threshold, offset)
    relatorio = ChangeReport(threshold=threshold, offset=offset, labels=rotulos)
    for direcao, rotulo in (("increase", ChangeLabel.INCREASING), ("decrease", ChangeLabel.DECREASING)):
        positivos = rotulos == rotulo.value
        if not positivos.any() or positivos.all():
            logger.warning("Sem pacientes %s (ou só eles); auPRC/auROC de %s indisponíveis", rotulo.value, direcao)
            continue
        escores = change_scores(predicted_totals, last_year_costs, direcao, offset)
        relatorio.pr_curves[direcao], auprc = pr_curve(escores, positivos)
        relatorio.roc_curves[direcao], auroc = roc_curve(escores, positivos)
        setattr(relatorio, f"auprc_{direcao}", auprc)
        setattr(relatorio, f"auroc_{direcao}", auroc)
    return relatorio


def fold_change_frame(
    patient_ids: Sequence[str],
    last_year_costs,
    future_totals,
    predicted_totals,
    labels,
    offset: float = DEFAULT_OFFSET,
) -> pd.DataFrame:
    previsto = np.maximum(np.asarray(predicted_totals, dtype=np.float64), 0.0)
    return pd.DataFrame({
        "patient_id": list(patient_ids),
        "last_year_cost": np.asarray(last_year_costs, dtype=np.float64),
        "future_cost": np.asarray(future_totals, dtype=np.float64),
        "predicted_cost": np.asarray(predicted_totals, dtype=np.float64),
        "log10_fold_change": np.log10(fold_change(last_year_costs, future_totals, offset)),
        "log10_predicted_fold_change": np.log10(fold_change(last_year_costs, previsto, offset)),
        "label": labels,
    })


@dataclass
class EvaluationReport:
    model_name: str
    pearson_r: float
    spearman_rho: float
    mape: float
    r_squared: float
    cpm: float
    n_evaluated: int
    error_by_cost_bin: pd.DataFrame
    change_analysis: ChangeReport | None = None

    def metrics(self) -> dict[str, float]:
        return {nome: getattr(self, nome) for nome in METRIC_COLUMNS}

    def to_dict(self) -> dict:
        return _sem_nan({
            "model_name": self.model_name,
            **self.metrics(),
            "n_evaluated": self.n_evaluated,
            "error_by_cost_bin": self.error_by_cost_bin.to_dict("records"),
            "change_analysis": self.change_analysis.to_dict() if self.change_analysis else None,
        })


def evaluate_predictions(
    model_name: str,
    y_true,
    y_pred,
    last_year_costs=None,
    edges=DEFAULT_BIN_EDGES,
    threshold: float = DEFAULT_THRESHOLD,
    offset: float = DEFAULT_OFFSET,
    reference=None,
    change_analysis: bool = True,
) -> EvaluationReport:
    """Relatório completo de um modelo sobre os custos totais verdadeiros e previstos."""
    y, yhat = _pares(y_true, y_pred)
    mudancas = None
    if change_analysis and last_year_costs is not None:
        mudancas = analyze_changes(yhat, last_year_costs, y, threshold, offset)
    relatorio = EvaluationReport(
        model_name=model_name,
        **all_metrics(y, yhat),
        n_evaluated=int(y.size),
        error_by_cost_bin=error_by_cost(y, yhat, edges, reference=reference),
        change_analysis=mudancas,
    )
    logger.info(
        "%s: r=%.3f rho=%.3f mape=%.2f r2=%.3f cpm=%.3f (n=%s)",
        model_name, relatorio.pearson_r, relatorio.spearman_rho, relatorio.mape,
        relatorio.r_squared, relatorio.cpm, relatorio.n_evaluated,
    )
    return relatorio


def metrics_table(reports: Sequence[EvaluationReport]) -> pd.DataFrame:
    """Uma linha por modelo, nas colunas r, rho, MAPE, r² e CPM."""
    return pd.DataFrame(
        [{"model": r.model_name, **r.metrics()} for r in reports],
        columns=["model", *METRIC_COLUMNS],
    )


def change_table(reports: Sequence[EvaluationReport]) -> pd.DataFrame:
    linhas = []
    for r in reports:
        if r.change_analysis is None:
            continue
        c = r.change_analysis
        linhas.append({
            "model": r.model_name,
            "auprc_increase": c.auprc_increase,
            "auprc_decrease": c.auprc_decrease,
            "auroc_increase": c.auroc_increase,
            "auroc_decrease": c.auroc_decrease,
        })
    return pd.DataFrame(linhas, columns=["model", "auprc_increase", "auprc_decrease", "auroc_increase", "auroc_decrease"])


def write_report_json(report: EvaluationReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def write_curves(report: EvaluationReport, directory: str | Path, prefix: str) -> list[Path]:
    """Grava as curvas PR e ROC de cada direção disponível como CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gravados = []
    if report.change_analysis is None:
        return gravados
    for tipo, curvas in (("pr", report.change_analysis.pr_curves), ("roc", report.change_analysis.roc_curves)):
        for direcao, curva in sorted(curvas.items()):
            path = directory / f"{prefix}_{tipo}_{direcao}.csv"
            curva.to_csv(path, index=False)
            gravados.append(path)
    return gravados

"""
Varredura de sensibilidade: desempenho da rede e da ridge em função do número
de pacientes de treino e dos anos de observação usados.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from custos.services.baselines import BaselineError
from custos.services.claims_data import QUARTERS_PER_YEAR, ClaimsRecord, DatasetError
from custos.services.evaluation import METRIC_COLUMNS, EvaluationError, all_metrics, filter_eligible
from custos.services.network import NetworkError
from custos.services.trainer import NetworkArch, TrainConfig, TrainingError, fit_network, fit_ridge, targets_matrix
from custos.services.vocab_encoder import VocabularyError, build_vocabulary, encode_many, truncate_observation

logger = logging.getLogger(__name__)

SWEEP_MODELS = ("network", "ridge")
STATUS_OK = "ok"
STATUS_MISSING = "missing"


@dataclass(frozen=True)
class SweepSettings:
    epochs: int = 25
    seed: int = 0
    learning_rate: float = 1e-3
    ridge_lambda: float = 0.1
    network_batch_size: int = 32
    ridge_batch_size: int = 128
    hidden: int = 50
    dropout: float = 0.25
    min_count: int = 10


def _faltando(n: int, anos: int, motivo: str) -> list[dict]:
    logger.warning("Célula (n=%s, anos=%s) ausente: %s", n, anos, motivo)
    return [
        {"patients": n, "years": anos, "model": modelo, **{m: np.nan for m in METRIC_COLUMNS},
         "status": STATUS_MISSING, "error": motivo}
        for modelo in SWEEP_MODELS
    ]


def run_cell(
    train: Sequence[ClaimsRecord],
    test: Sequence[ClaimsRecord],
    n: int,
    anos: int,
    ajustes: SweepSettings,
) -> list[dict]:
    """Treina e avalia os dois modelos numa célula; célula inviável vira linhas ``missing``."""
    if n > len(train):
        return _faltando(n, anos, f"apenas {len(train)} fichas de treino")
    T = train[0].quarters
    if anos * QUARTERS_PER_YEAR > T:
        return _faltando(n, anos, f"observação tem só {T // QUARTERS_PER_YEAR} anos")
    try:
        subconjunto = [truncate_observation(f, anos) for f in train[:n]]
        avaliadas = [truncate_observation(f, anos) for f in test]
        vocab = build_vocabulary(subconjunto, ajustes.min_count)
        X = encode_many(subconjunto, vocab, anos * QUARTERS_PER_YEAR)
        Y = targets_matrix(subconjunto)
        X_teste = encode_many(avaliadas, vocab, anos * QUARTERS_PER_YEAR)
        y_teste = np.array([f.target.total for f in avaliadas])

        rede, _ = fit_network(
            X, Y,
            TrainConfig(epochs=ajustes.epochs, batch_size=ajustes.network_batch_size, seed=ajustes.seed,
                        learning_rate=ajustes.learning_rate),
            NetworkArch(hidden=ajustes.hidden, dropout=ajustes.dropout),
        )
        ridge, _ = fit_ridge(
            X, Y,
            TrainConfig(epochs=ajustes.epochs, batch_size=ajustes.ridge_batch_size, seed=ajustes.seed,
                        learning_rate=ajustes.learning_rate, lambda_=ajustes.ridge_lambda),
        )
        linhas = []
        for nome, modelo in (("network", rede), ("ridge", ridge)):
            metricas = all_metrics(y_teste, modelo.predict_totals(X_teste))
            linhas.append({"patients": n, "years": anos, "model": nome, **metricas, "status": STATUS_OK, "error": ""})
        logger.info("Célula (n=%s, anos=%s): r2 rede=%.3f ridge=%.3f", n, anos, linhas[0]["r_squared"], linhas[1]["r_squared"])
        return linhas
    except (BaselineError, DatasetError, EvaluationError, NetworkError, TrainingError, VocabularyError) as e:
        return _faltando(n, anos, str(e))


def run_sweep(
    train: Sequence[ClaimsRecord],
    test: Sequence[ClaimsRecord],
    patient_counts: Sequence[int],
    years: Sequence[int],
    ajustes: SweepSettings = SweepSettings(),
    workers: int = 1,
) -> pd.DataFrame:
    """Uma linha por (n, anos, modelo), na ordem da grade. Valores repetidos contam uma vez."""
    if not train:
        raise DatasetError("conjunto de treino vazio")
    teste = filter_eligible(test)
    if any(f.target is None for f in teste):
        raise EvaluationError("todas as fichas de teste precisam de alvo")
    contagens = list(dict.fromkeys(int(n) for n in patient_counts))
    anos = list(dict.fromkeys(int(a) for a in years))
    if len(contagens) < len(patient_counts) or len(anos) < len(years):
        logger.warning("Valores repetidos na grade ignorados: pacientes=%s anos=%s", contagens, anos)
    celulas = [(n, a) for n in contagens for a in anos]
    logger.info("Sweep com %s células em %s processos", len(celulas), workers)
    resultados = Parallel(n_jobs=workers)(
        delayed(run_cell)(train, teste, n, a, ajustes) for n, a in celulas
    )
    return pd.DataFrame(
        [linha for celula in resultados for linha in celula],
        columns=["patients", "years", "model", *METRIC_COLUMNS, "status", "error"],
    )


def metric_grids(cells: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Grades pacientes x anos por métrica e modelo, e a diferença rede - ridge."""
    grades = {}
    for metrica in METRIC_COLUMNS:
        por_modelo = {}
        for modelo in SWEEP_MODELS:
            parte = cells[cells["model"] == modelo]
            por_modelo[modelo] = parte.pivot(index="patients", columns="years", values=metrica)
            grades[f"{metrica}_{modelo}"] = por_modelo[modelo]
        grades[f"{metrica}_difference"] = por_modelo["network"] - por_modelo["ridge"]
    return grades

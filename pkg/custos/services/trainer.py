"""
Treino por minibatch com perda l2 e ADAM, para a rede e para a ridge, e os
modelos compostos (ensemble e um modelo por categoria).

A perda de cada passo é a média sobre as fichas do lote efetivamente sorteado
(o último lote da época pode ser menor), mais lambda * ||W||^2 na ridge.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import ClassVar, Literal, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from custos.services.baselines import DEFAULT_LAMBDA, RidgeModel, RidgeParameters
from custos.services.claims_data import N_CATEGORIES, ClaimsRecord
from custos.services.network import (
    DEFAULT_DROPOUT,
    DEFAULT_HIDDEN,
    DropoutConfig,
    NetworkParameters,
    NeuralNetworkModel,
    backward,
    forward,
    predict_total,
)
from custos.services.sementes import gerador
from custos.services.vocab_encoder import CodeVocabulary, encode_many

logger = logging.getLogger(__name__)

NETWORK_BATCH_SIZE = 32
RIDGE_BATCH_SIZE = 128
DEFAULT_EPOCHS = 25


class TrainingError(Exception): ...


@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.t < 0:
            raise TrainingError(f"contador de passos negativo: {self.t}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainingError(f"taxas de decaimento fora de [0, 1): {self.beta1}, {self.beta2}")
        if self.alpha <= 0 or self.epsilon <= 0:
            raise TrainingError("alpha e epsilon precisam ser positivos")

    @classmethod
    def fresh(cls, params, **hiperparametros) -> "AdamState":
        arrays = _arrays(params)
        return cls(
            m={k: np.zeros_like(a, dtype=np.float64) for k, a in arrays.items()},
            v={k: np.zeros_like(a, dtype=np.float64) for k, a in arrays.items()},
            **hiperparametros,
        )


def _arrays(params) -> dict:
    if isinstance(params, Mapping):
        return {k: np.asarray(a, dtype=np.float64) for k, a in params.items()}
    return params.as_dict()


def adam_step(params, grads, state: AdamState):
    """
    Um passo de ADAM com momentos corrigidos de viés. ``params`` e ``grads``
    podem ser parâmetros do modelo (as_dict/with_arrays) ou dicionários de arrays.
    """
    theta = _arrays(params)
    g = _arrays(grads)
    if set(theta) != set(g) or set(theta) != set(state.m):
        raise TrainingError("parâmetros, gradientes e estado com chaves diferentes")
    t = state.t + 1
    for nome, valor in g.items():
        if valor.shape != theta[nome].shape:
            raise TrainingError(f"gradiente de {nome} com forma {valor.shape}, esperado {theta[nome].shape}")
        if not np.all(np.isfinite(valor)):
            raise TrainingError(f"gradiente não finito em {nome} no passo {t}")

    b1, b2 = state.beta1, state.beta2
    novos, m, v = {}, {}, {}
    for nome in theta:
        m[nome] = b1 * state.m[nome] + (1 - b1) * g[nome]
        v[nome] = b2 * state.v[nome] + (1 - b2) * g[nome] ** 2
        m_hat = m[nome] / (1 - b1**t)
        v_hat = v[nome] / (1 - b2**t)
        novos[nome] = theta[nome] - state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon)

    estado = replace(state, m=m, v=v, t=t)
    if isinstance(params, Mapping):
        return novos, estado
    return params.with_arrays(novos), estado


@dataclass(frozen=True)
class NetworkArch:
    hidden: int = DEFAULT_HIDDEN
    dropout: float = DEFAULT_DROPOUT

    def __post_init__(self):
        if self.hidden < 1:
            raise TrainingError(f"largura oculta inválida: {self.hidden}")
        if not 0 <= self.dropout < 1:
            raise TrainingError(f"dropout deve estar em [0, 1): {self.dropout}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = NETWORK_BATCH_SIZE
    seed: int = 0
    shuffle: bool = True
    lambda_: float = DEFAULT_LAMBDA
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    joint: bool = True
    normalize_targets: bool = True

    def __post_init__(self):
        if isinstance(self.epochs, bool) or self.epochs < 0:
            raise TrainingError(f"epochs deve ser inteiro não negativo: {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size deve ser positivo: {self.batch_size}")
        if self.seed < 0:
            raise TrainingError(f"seed deve ser não negativa: {self.seed}")
        if self.lambda_ < 0:
            raise TrainingError(f"lambda deve ser >= 0: {self.lambda_}")

    @classmethod
    def for_model(cls, model: str, **valores) -> "TrainConfig":
        """Padrões por tipo: lote 32 para a rede, 128 para a ridge."""
        padrao = RIDGE_BATCH_SIZE if model == "ridge" else NETWORK_BATCH_SIZE
        valores.setdefault("batch_size", padrao)
        return cls(**valores)

    def adam(self, params) -> AdamState:
        return AdamState.fresh(
            params, alpha=self.learning_rate, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon
        )


@dataclass
class LossLog:
    epochs: list = field(default_factory=list)

    def add(self, epoch: int, mean_train_loss: float, wall_seconds: float):
        self.epochs.append((epoch, mean_train_loss, wall_seconds))

    @property
    def losses(self) -> list[float]:
        return [perda for _, perda, _ in self.epochs]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.epochs, columns=["epoch", "mean_train_loss", "wall_seconds"])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def merged(cls, logs: Sequence["LossLog"]) -> "LossLog":
        """Soma as perdas de membros treinados em paralelo de categorias (mesma época)."""
        combinado = cls()
        for linhas in zip(*(log.epochs for log in logs)):
            combinado.add(linhas[0][0], float(sum(l[1] for l in linhas)), float(sum(l[2] for l in linhas)))
        return combinado

    @classmethod
    def averaged(cls, logs: Sequence["LossLog"]) -> "LossLog":
        """Perda média dos membros de um ensemble; tempo somado."""
        combinado = cls.merged(logs)
        combinado.epochs = [(e, perda / len(logs), s) for e, perda, s in combinado.epochs]
        return combinado


def targets_matrix(records: Sequence[ClaimsRecord]) -> np.ndarray:
    if not records:
        raise TrainingError("conjunto de treino vazio")
    sem_alvo = [f.patient_id for f in records if f.target is None]
    if sem_alvo:
        raise TrainingError(f"{len(sem_alvo)} fichas sem alvo (ex.: {sem_alvo[0]})")
    return np.vstack([f.target.as_array() for f in records])


def design_matrix(records: Sequence[ClaimsRecord], vocab: CodeVocabulary) -> sparse.csr_matrix:
    trimestres = {f.quarters for f in records}
    if len(trimestres) != 1:
        raise TrainingError(f"fichas com observações de tamanhos diferentes: {sorted(trimestres)}")
    return encode_many(records, vocab, trimestres.pop())


def _escala(Y: np.ndarray, normalizar: bool) -> float:
    if not normalizar:
        return 1.0
    rms = float(np.sqrt(np.mean(Y**2)))
    return rms if rms > 0 else 1.0


def _lotes(n: int, config: TrainConfig, rng: np.random.Generator):
    ordem = rng.permutation(n) if config.shuffle else np.arange(n)
    for inicio in range(0, n, config.batch_size):
        yield ordem[inicio:inicio + config.batch_size]


def fit_network(
    X,
    Y: np.ndarray,
    config: TrainConfig,
    arch: NetworkArch = NetworkArch(),
    output_mask: np.ndarray | None = None,
) -> tuple[NeuralNetworkModel, LossLog]:
    """
    Ajusta uma rede em (X, Y). ``output_mask`` restringe a perda a algumas
    categorias (modo por categoria); por padrão a perda soma as 7.
    """
    X = sparse.csr_matrix(X) if not sparse.issparse(X) else X.tocsr()
    Y = np.asarray(Y, dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise TrainingError("conjunto de treino vazio")
    if Y.shape != (n, N_CATEGORIES):
        raise TrainingError(f"alvos com forma {Y.shape}, esperado {(n, N_CATEGORIES)}")
    mascara = np.ones(N_CATEGORIES) if output_mask is None else np.asarray(output_mask, dtype=np.float64)

    escala = _escala(Y * mascara, config.normalize_targets)
    params = NetworkParameters.initialize(d, arch.hidden, gerador(config.seed, "init"), output_scale=escala)
    estado = config.adam(params)
    rng_ordem = gerador(config.seed, "shuffle")
    rng_dropout = gerador(config.seed, "dropout")
    dropout = DropoutConfig(rate=arch.dropout, mode="train", seed=config.seed)
    log = LossLog()

    for epoca in range(1, config.epochs + 1):
        inicio = time.perf_counter()
        soma_perda = 0.0
        for indices in _lotes(n, config, rng_ordem):
            y_hat, trace = forward(params, X[indices], dropout, rng=rng_dropout, keep_trace=True)
            erro = (y_hat - Y[indices]) * mascara
            soma_perda += float(np.sum(erro**2))
            grad_saida = 2.0 * erro / (escala**2 * len(indices))
            grads = backward(params, trace, grad_saida)
            params, estado = _passo(params, grads, estado)
        segundos = time.perf_counter() - inicio
        log.add(epoca, soma_perda / n, segundos)
        logger.info("Época %s/%s da rede: perda média %.4f (%.2fs)", epoca, config.epochs, soma_perda / n, segundos)

    return NeuralNetworkModel(params=params, dropout_rate=arch.dropout), log


def _passo(params, grads, estado: AdamState):
    try:
        return adam_step(params, grads, estado)
    except TrainingError as e:
        raise TrainingError(f"treino abortado: {e}") from e


def fit_ridge(X, Y: np.ndarray, config: TrainConfig) -> tuple[RidgeModel, LossLog]:
    """Minimiza o erro quadrático médio mais lambda * ||W||^2 (viés sem penalidade)."""
    X = sparse.csr_matrix(X) if not sparse.issparse(X) else X.tocsr()
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if n == 0:
        raise TrainingError("conjunto de treino vazio")
    if Y.shape[0] != n:
        raise TrainingError(f"{Y.shape[0]} alvos para {n} linhas")

    escala = _escala(Y, config.normalize_targets)
    Ys = Y / escala
    params = RidgeParameters.zeros(d, Y.shape[1], output_scale=escala)
    estado = config.adam(params)
    rng_ordem = gerador(config.seed, "shuffle")
    lam = config.lambda_
    log = LossLog()

    for epoca in range(1, config.epochs + 1):
        inicio = time.perf_counter()
        soma_perda = 0.0
        for indices in _lotes(n, config, rng_ordem):
            Xb = X[indices]
            residuo = np.asarray(Xb @ params.W) + params.b - Ys[indices]
            soma_perda += float(np.sum(residuo**2)) * escala**2
            g = 2.0 * residuo / len(indices)
            grads = {
                "W": np.asarray(Xb.T @ g) + 2.0 * lam * params.W,
                "b": g.sum(axis=0),
            }
            params, estado = _passo(params, grads, estado)
        segundos = time.perf_counter() - inicio
        log.add(epoca, soma_perda / n, segundos)
        logger.info("Época %s/%s da ridge: perda média %.4f (%.2fs)", epoca, config.epochs, soma_perda / n, segundos)

    return RidgeModel(params=params, lambda_=lam), log


@dataclass(frozen=True)
class EnsembleModel:
    """Média aritmética das previsões dos membros, por categoria."""

    members: tuple

    kind: ClassVar[str] = "ensemble"

    def __post_init__(self):
        if not self.members:
            raise TrainingError("ensemble sem membros")

    @property
    def member_kind(self) -> str:
        return self.members[0].kind

    @property
    def supports_input_gradient(self) -> bool:
        return all(m.supports_input_gradient for m in self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members], axis=0)

    def predict_totals(self, X, records=None) -> np.ndarray:
        return np.atleast_1d(predict_total(self.predict(X)))

    def input_gradient(self, X, output_weights, columns=None) -> np.ndarray:
        return np.mean([m.input_gradient(X, output_weights, columns) for m in self.members], axis=0)


@dataclass(frozen=True)
class CategoryWiseModel:
    """Sete redes; a categoria c da previsão vem do membro c."""

    members: tuple

    kind: ClassVar[str] = "category_wise"
    member_kind: ClassVar[str] = "network"

    def __post_init__(self):
        if len(self.members) != N_CATEGORIES:
            raise TrainingError(f"modelo por categoria precisa de {N_CATEGORIES} membros, recebeu {len(self.members)}")

    @property
    def supports_input_gradient(self) -> bool:
        return all(m.supports_input_gradient for m in self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    def predict(self, X) -> np.ndarray:
        colunas = [m.predict(X)[..., c] for c, m in enumerate(self.members)]
        return np.stack(colunas, axis=-1)

    def predict_totals(self, X, records=None) -> np.ndarray:
        return np.atleast_1d(predict_total(self.predict(X)))

    def input_gradient(self, X, output_weights, columns=None) -> np.ndarray:
        pesos = np.asarray(output_weights, dtype=np.float64)
        total = None
        for c, membro in enumerate(self.members):
            if pesos[c] == 0:
                continue
            unitario = np.zeros(N_CATEGORIES)
            unitario[c] = pesos[c]
            parcial = membro.input_gradient(X, unitario, columns)
            total = parcial if total is None else total + parcial
        if total is None:
            return self.members[0].input_gradient(X, np.zeros(N_CATEGORIES), columns)
        return total


def _fit_category_wise(X, Y, config: TrainConfig, arch: NetworkArch):
    membros, logs = [], []
    for c in range(N_CATEGORIES):
        mascara = np.zeros(N_CATEGORIES)
        mascara[c] = 1.0
        logger.info("Treinando rede da categoria %s/%s", c + 1, N_CATEGORIES)
        modelo, log = fit_network(X, Y, config, arch, output_mask=mascara)
        membros.append(modelo)
        logs.append(log)
    return CategoryWiseModel(members=tuple(membros)), LossLog.merged(logs)


def train_network(
    train: Sequence[ClaimsRecord],
    vocab: CodeVocabulary,
    config: TrainConfig,
    arch: NetworkArch = NetworkArch(),
):
    """Treina a rede (ou as sete redes, com ``joint=False``); retorna (modelo, log)."""
    Y = targets_matrix(train)
    X = design_matrix(train, vocab)
    logger.info("Treinando rede em %s fichas, d=%s, H=%s", X.shape[0], X.shape[1], arch.hidden)
    if not config.joint:
        return _fit_category_wise(X, Y, config, arch)
    return fit_network(X, Y, config, arch)


def train_ridge(train: Sequence[ClaimsRecord], vocab: CodeVocabulary, config: TrainConfig):
    Y = targets_matrix(train)
    X = design_matrix(train, vocab)
    logger.info("Treinando ridge em %s fichas, d=%s, lambda=%s", X.shape[0], X.shape[1], config.lambda_)
    return fit_ridge(X, Y, config)


def train_ensemble(
    train: Sequence[ClaimsRecord],
    vocab: CodeVocabulary,
    config: TrainConfig,
    k: int,
    kind: Literal["network", "ridge"] = "network",
    arch: NetworkArch = NetworkArch(),
) -> tuple[EnsembleModel, list[LossLog]]:
    """Treina ``k`` membros com sementes seed, seed+1, ...; retorna (ensemble, logs)."""
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise TrainingError(f"k deve ser inteiro positivo: {k}")
    if kind not in ("network", "ridge"):
        raise TrainingError(f"tipo de membro desconhecido: {kind}")
    if kind == "network" and not config.joint:
        raise TrainingError("ensemble de modelos por categoria não é suportado")
    Y = targets_matrix(train)
    X = design_matrix(train, vocab)
    membros, logs = [], []
    for i in range(k):
        membro_config = replace(config, seed=config.seed + i)
        logger.info("Membro %s/%s do ensemble (%s, seed=%s)", i + 1, k, kind, membro_config.seed)
        if kind == "network":
            modelo, log = fit_network(X, Y, membro_config, arch)
        else:
            modelo, log = fit_ridge(X, Y, membro_config)
        membros.append(modelo)
        logs.append(log)
    return EnsembleModel(members=tuple(membros)), logs

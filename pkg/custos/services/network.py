"""
Rede de arquitetura fixa: quatro camadas ocultas ReLU de largura H com dropout,
e uma camada final de 7 neurônios ReLU que recebe [h4; x] (a entrada original
concatenada ao último oculto). Gradientes calculados à mão (modo reverso).

Convenções:
- dropout invertido nas camadas ocultas (escala 1/(1-p) no treino, inferência intacta);
- a primeira camada aceita CSR, então o custo é proporcional aos não nulos de x;
- ``output_scale`` multiplica a saída; o treino usa para trabalhar com alvos
  normalizados e a previsão continua em Euro.
"""
import logging
from dataclasses import dataclass, field
from typing import ClassVar, Literal, Mapping

import numpy as np
from scipy import sparse

from custos.services.claims_data import INCAPACITY_INDEX, N_CATEGORIES
from custos.services.vocab_encoder import SparseFeatureVector

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 50
DEFAULT_DROPOUT = 0.25
N_HIDDEN_LAYERS = 4


class NetworkError(Exception): ...


@dataclass(frozen=True)
class NetworkParameters:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    W5: np.ndarray
    b5: np.ndarray
    output_scale: float = 1.0

    NAMES: ClassVar[tuple[str, ...]] = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "W5", "b5")

    def __post_init__(self):
        for nome in self.NAMES:
            object.__setattr__(self, nome, np.asarray(getattr(self, nome), dtype=np.float64))
        d, H = self.W1.shape if self.W1.ndim == 2 else (None, None)
        if d is None:
            raise NetworkError("W1 precisa ser uma matriz d x H")
        esperados = {
            "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (H, H), "b3": (H,),
            "W4": (H, H), "b4": (H,), "W5": (H + d, N_CATEGORIES), "b5": (N_CATEGORIES,),
        }
        for nome, forma in esperados.items():
            if getattr(self, nome).shape != forma:
                raise NetworkError(f"{nome} com forma {getattr(self, nome).shape}, esperado {forma}")
        for nome in self.NAMES:
            if not np.all(np.isfinite(getattr(self, nome))):
                raise NetworkError(f"{nome} contém valores não finitos")
        if not np.isfinite(self.output_scale) or self.output_scale <= 0:
            raise NetworkError(f"output_scale inválido: {self.output_scale}")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {nome: getattr(self, nome) for nome in self.NAMES}

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "NetworkParameters":
        return NetworkParameters(**{nome: arrays[nome] for nome in self.NAMES}, output_scale=self.output_scale)

    @classmethod
    def zeros(cls, d: int, hidden: int = DEFAULT_HIDDEN, output_scale: float = 1.0) -> "NetworkParameters":
        H = hidden
        return cls(
            W1=np.zeros((d, H)), b1=np.zeros(H),
            W2=np.zeros((H, H)), b2=np.zeros(H),
            W3=np.zeros((H, H)), b3=np.zeros(H),
            W4=np.zeros((H, H)), b4=np.zeros(H),
            W5=np.zeros((H + d, N_CATEGORIES)), b5=np.zeros(N_CATEGORIES),
            output_scale=output_scale,
        )

    @classmethod
    def initialize(
        cls, d: int, hidden: int, rng: np.random.Generator, output_scale: float = 1.0
    ) -> "NetworkParameters":
        """Uniforme com variância 2/fan_in por camada; vieses zerados."""
        if d < 1 or hidden < 1:
            raise NetworkError(f"dimensões inválidas: d={d}, H={hidden}")

        def uniforme(fan_in, forma):
            limite = np.sqrt(6.0 / fan_in)
            return rng.uniform(-limite, limite, size=forma)

        H = hidden
        return cls(
            W1=uniforme(d, (d, H)), b1=np.zeros(H),
            W2=uniforme(H, (H, H)), b2=np.zeros(H),
            W3=uniforme(H, (H, H)), b3=np.zeros(H),
            W4=uniforme(H, (H, H)), b4=np.zeros(H),
            W5=uniforme(H + d, (H + d, N_CATEGORIES)), b5=np.zeros(N_CATEGORIES),
            output_scale=output_scale,
        )


@dataclass(frozen=True)
class DropoutConfig:
    rate: float = DEFAULT_DROPOUT
    mode: Literal["train", "inference"] = "inference"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise NetworkError(f"taxa de dropout deve estar em [0, 1): {self.rate}")
        if self.mode not in ("train", "inference"):
            raise NetworkError(f"modo de dropout desconhecido: {self.mode}")

    @property
    def active(self) -> bool:
        return self.mode == "train" and self.rate > 0


INFERENCE = DropoutConfig(rate=0.0, mode="inference")


@dataclass
class ForwardTrace:
    params: NetworkParameters
    X: object
    columns: np.ndarray | None
    pre_activations: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    single: bool = False


def _como_matriz(x) -> tuple[object, bool]:
    if isinstance(x, SparseFeatureVector):
        return x.to_csr(), True
    if sparse.issparse(x):
        return sparse.csr_matrix(x), False
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise NetworkError(f"entrada com {x.ndim} dimensões")


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _pesos_entrada(params: NetworkParameters, columns: np.ndarray | None):
    H = params.hidden
    if columns is None:
        return params.W1, params.W5[H:]
    return params.W1[columns], params.W5[H + columns]


def forward(
    params: NetworkParameters,
    x,
    dropout: DropoutConfig = INFERENCE,
    rng: np.random.Generator | None = None,
    keep_trace: bool = False,
    columns: np.ndarray | None = None,
):
    """
    Propagação direta. ``x`` pode ser SparseFeatureVector, vetor denso, matriz
    densa ou CSR (uma linha por paciente). Com ``columns``, x traz só essas
    colunas da entrada e as demais são tratadas como zero.

    Retorna (y_hat, trace); trace é None salvo com ``keep_trace=True``.
    """
    X, single = _como_matriz(x)
    if columns is not None:
        columns = np.asarray(columns, dtype=np.int64)
    esperado = params.input_dim if columns is None else len(columns)
    if X.shape[1] != esperado:
        raise NetworkError(f"dimensão de entrada incompatível: esperado d={esperado}, recebido d={X.shape[1]}")

    if dropout.active and rng is None:
        rng = np.random.default_rng(dropout.seed)

    W1, W5x = _pesos_entrada(params, columns)
    trace = ForwardTrace(params=params, X=X, columns=columns, single=single) if keep_trace else None

    h = None
    for camada in range(1, N_HIDDEN_LAYERS + 1):
        W = getattr(params, f"W{camada}")
        b = getattr(params, f"b{camada}")
        z = np.asarray(X @ W1) + b if camada == 1 else h @ W + b
        h = _relu(z)
        mascara = None
        if dropout.active:
            mascara = (rng.random(h.shape) >= dropout.rate) / (1.0 - dropout.rate)
            h = h * mascara
        if trace is not None:
            trace.pre_activations.append(z)
            trace.activations.append(h)
            trace.masks.append(mascara)

    H = params.hidden
    z5 = h @ params.W5[:H] + np.asarray(X @ W5x) + params.b5
    y = params.output_scale * _relu(z5)
    if trace is not None:
        trace.pre_activations.append(z5)
    return (y[0] if single else y), trace


def _retropropagar(params: NetworkParameters, trace: ForwardTrace, grad_output, pesos: bool, entrada: bool):
    if trace is None or trace.params is not params:
        raise NetworkError("trace obsoleto ou de outros parâmetros; refaça o forward")
    if len(trace.pre_activations) != N_HIDDEN_LAYERS + 1:
        raise NetworkError("trace incompleto")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    z5 = trace.pre_activations[-1]
    if g.shape != z5.shape:
        raise NetworkError(f"grad_output com forma {g.shape}, esperado {z5.shape}")

    X = trace.X
    H = params.hidden
    W1, W5x = _pesos_entrada(params, trace.columns)
    grads = {}

    g = g * params.output_scale * (z5 > 0)
    h4 = trace.activations[-1]
    if pesos:
        grads["W5"] = np.vstack([h4.T @ g, _transposta_vezes(X, g, params.input_dim, trace.columns)])
        grads["b5"] = g.sum(axis=0)
    dx = np.asarray(g @ W5x.T) if entrada else None
    dh = g @ params.W5[:H].T

    for camada in range(N_HIDDEN_LAYERS, 0, -1):
        z = trace.pre_activations[camada - 1]
        mascara = trace.masks[camada - 1]
        dz = dh * (z > 0)
        if mascara is not None:
            dz = dz * mascara
        if pesos:
            if camada == 1:
                grads["W1"] = _transposta_vezes(X, dz, params.input_dim, trace.columns)
            else:
                grads[f"W{camada}"] = trace.activations[camada - 2].T @ dz
            grads[f"b{camada}"] = dz.sum(axis=0)
        if camada > 1:
            dh = dz @ getattr(params, f"W{camada}").T
        elif entrada:
            dx = dx + dz @ W1.T
    return grads, dx


def _transposta_vezes(X, g: np.ndarray, d: int, columns: np.ndarray | None) -> np.ndarray:
    """X^T g; com ``columns`` espalha as linhas nas posições originais."""
    parcial = np.asarray(X.T @ g)
    if columns is None:
        return parcial
    completo = np.zeros((d, g.shape[1]))
    np.add.at(completo, columns, parcial)
    return completo


def backward(params: NetworkParameters, trace: ForwardTrace, grad_output) -> NetworkParameters:
    """
    Gradiente de L em relação aos parâmetros, dado dL/dy_hat. Com entrada
    esparsa, só as linhas de W1 tocadas por x recebem gradiente não nulo.
    """
    grads, _ = _retropropagar(params, trace, grad_output, pesos=True, entrada=False)
    return NetworkParameters(**grads)


def input_gradient(params: NetworkParameters, x, output_weights, columns: np.ndarray | None = None) -> np.ndarray:
    """
    Gradiente de F = sum_c w_c * y_hat_c em relação à entrada (modo inferência),
    uma linha por linha de ``x``.
    """
    _, trace = forward(params, x, INFERENCE, keep_trace=True, columns=columns)
    n = trace.pre_activations[-1].shape[0]
    pesos = np.broadcast_to(np.asarray(output_weights, dtype=np.float64), (n, N_CATEGORIES))
    _, dx = _retropropagar(params, trace, pesos, pesos=False, entrada=True)
    return dx[0] if trace.single else dx


def predict_total(y_hat) -> float | np.ndarray:
    """Soma das categorias previstas, exceto o auxílio-doença."""
    y = np.asarray(y_hat, dtype=np.float64)
    if y.shape[-1] != N_CATEGORIES:
        raise NetworkError(f"y_hat precisa de {N_CATEGORIES} categorias, recebeu {y.shape[-1]}")
    mascara = np.ones(N_CATEGORIES, dtype=bool)
    mascara[INCAPACITY_INDEX] = False
    total = y[..., mascara].sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def total_cost_weights() -> np.ndarray:
    """Pesos de saída que compõem predict_total."""
    pesos = np.ones(N_CATEGORIES)
    pesos[INCAPACITY_INDEX] = 0.0
    return pesos


@dataclass(frozen=True)
class NeuralNetworkModel:
    params: NetworkParameters
    dropout_rate: float = DEFAULT_DROPOUT

    kind: ClassVar[str] = "network"
    supports_input_gradient: ClassVar[bool] = True

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    def predict(self, X) -> np.ndarray:
        y, _ = forward(self.params, X, INFERENCE)
        return y

    def input_gradient(self, X, output_weights, columns=None) -> np.ndarray:
        return input_gradient(self.params, X, output_weights, columns=columns)

    def predict_totals(self, X, records=None) -> np.ndarray:
        return np.atleast_1d(predict_total(self.predict(X)))

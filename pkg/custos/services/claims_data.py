"""
Modelo de dados dos sinistros: eventos codificados, valores numéricos por
trimestre, vetor de custos futuros e a ficha longitudinal de cada paciente.

Formato em disco: JSONL, um paciente por linha::

    {"patient_id": "P00001",
     "events": [{"kind": "ICD10", "code": "D0012", "quarter": 3}],
     "numerics": [{"name": "cost_total", "value": 120.5, "quarter": 3}],
     "target": {"medications": 10.0, ..., "dentistry": 0.0},
     "alive_or_insured": true}
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from custos.services.sementes import gerador

logger = logging.getLogger(__name__)


class DatasetError(Exception):
    """Erro de ingestão ou de invariante da ficha; carrega a linha quando conhecida."""

    def __init__(self, mensagem: str, linha: int | None = None):
        self.linha = linha
        if linha is not None:
            mensagem = f"{mensagem}, linha {linha}"
        super().__init__(mensagem)


class EventKind(str, Enum):
    ICD10 = "ICD10"
    ATC = "ATC"
    DRG = "DRG"
    OPS = "OPS"
    FG = "FG"
    GOP = "GOP"
    SEX = "SEX"
    OTHER = "OTHER"


COST_CATEGORIES = (
    "medications",
    "practice",
    "hospital",
    "medical_sundries",
    "therapeutic_appliances",
    "incapacity_compensation",
    "dentistry",
)
N_CATEGORIES = len(COST_CATEGORIES)
INCAPACITY_INDEX = COST_CATEGORIES.index("incapacity_compensation")

# Evento numérico com o custo total (sem auxílio-doença) de cada trimestre observado
COST_EVENT_NAME = "cost_total"
QUARTERS_PER_YEAR = 4

_SEPARADORES = frozenset(",;|")


def _validar_token(valor, campo: str) -> str:
    if not isinstance(valor, str) or not valor:
        raise DatasetError(f"{campo} deve ser texto não vazio")
    if any(c.isspace() or c in _SEPARADORES for c in valor):
        raise DatasetError(f"{campo} contém espaço ou separador: {valor!r}")
    return valor


def _validar_trimestre(valor) -> int:
    if isinstance(valor, bool) or not isinstance(valor, (int, np.integer)):
        raise DatasetError(f"trimestre deve ser inteiro: {valor!r}")
    if valor < 0:
        raise DatasetError(f"trimestre negativo: {valor}")
    return int(valor)


@dataclass(frozen=True)
class CodedEvent:
    kind: EventKind
    code: str
    quarter: int

    def __post_init__(self):
        try:
            kind = EventKind(self.kind)
        except ValueError:
            raise DatasetError(f"tipo de evento desconhecido: {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        _validar_token(self.code, "code")
        object.__setattr__(self, "quarter", _validar_trimestre(self.quarter))


@dataclass(frozen=True)
class NumericEvent:
    name: str
    value: float
    quarter: int

    def __post_init__(self):
        _validar_token(self.name, "name")
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float, np.number)):
            raise DatasetError(f"valor numérico inválido: {self.value!r}")
        if not math.isfinite(self.value):
            raise DatasetError(f"valor numérico não finito em '{self.name}'")
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "quarter", _validar_trimestre(self.quarter))


@dataclass(frozen=True)
class CostVector:
    """Custos em Euro, um valor por categoria de COST_CATEGORIES."""

    values: tuple[float, ...]

    def __post_init__(self):
        valores = tuple(float(v) for v in self.values)
        if len(valores) != N_CATEGORIES:
            raise DatasetError(f"vetor de custos precisa de {N_CATEGORIES} categorias, recebeu {len(valores)}")
        for nome, valor in zip(COST_CATEGORIES, valores):
            if not math.isfinite(valor):
                raise DatasetError(f"custo não finito em '{nome}'")
            if valor < 0:
                raise DatasetError(f"custo negativo em '{nome}'")
        object.__setattr__(self, "values", valores)

    @classmethod
    def from_mapping(cls, dados: Mapping[str, float]) -> "CostVector":
        if not isinstance(dados, Mapping):
            raise DatasetError("target deve ser um objeto com as categorias de custo")
        desconhecidas = set(dados) - set(COST_CATEGORIES)
        if desconhecidas:
            raise DatasetError(f"categorias desconhecidas no target: {sorted(desconhecidas)}")
        faltando = [c for c in COST_CATEGORIES if c not in dados]
        if faltando:
            raise DatasetError(f"categorias ausentes no target: {faltando}")
        for nome in COST_CATEGORIES:
            valor = dados[nome]
            if isinstance(valor, bool) or not isinstance(valor, (int, float)):
                raise DatasetError(f"custo inválido em '{nome}': {valor!r}")
        return cls(tuple(dados[c] for c in COST_CATEGORIES))

    def to_mapping(self) -> dict[str, float]:
        return dict(zip(COST_CATEGORIES, self.values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @property
    def total(self) -> float:
        """Custo total comparável: todas as categorias menos o auxílio-doença."""
        return math.fsum(v for i, v in enumerate(self.values) if i != INCAPACITY_INDEX)


def derive_prior_costs(numeric_events: Iterable[NumericEvent], quarters: int) -> tuple[float, float, bool]:
    """
    Calcula (custo do último ano, média anual da observação, disponível) a partir
    dos eventos ``cost_total``. Sem esses eventos os baselines ficam indisponíveis.
    """
    custos = [e for e in numeric_events if e.name == COST_EVENT_NAME]
    if not custos:
        return 0.0, 0.0, False
    for evento in custos:
        if evento.value < 0:
            raise DatasetError(f"custo negativo em '{COST_EVENT_NAME}' no trimestre {evento.quarter}")
    inicio_ultimo_ano = quarters - QUARTERS_PER_YEAR
    ultimo_ano = math.fsum(e.value for e in custos if e.quarter >= inicio_ultimo_ano)
    anos = quarters / QUARTERS_PER_YEAR
    media = math.fsum(e.value for e in custos) / anos
    return ultimo_ano, media, True


@dataclass(frozen=True)
class ClaimsRecord:
    patient_id: str
    coded_events: tuple[CodedEvent, ...] = ()
    numeric_events: tuple[NumericEvent, ...] = ()
    target: CostVector | None = None
    alive_or_insured: bool = True
    quarters: int = 24
    last_year_cost: float = 0.0
    mean_prior_cost: float = 0.0
    costs_available: bool = field(default=False)

    @classmethod
    def build(
        cls,
        patient_id: str,
        coded_events: Sequence[CodedEvent] = (),
        numeric_events: Sequence[NumericEvent] = (),
        target: CostVector | Mapping[str, float] | None = None,
        alive_or_insured: bool = True,
        quarters: int = 24,
    ) -> "ClaimsRecord":
        """Valida a ficha e deriva os custos anteriores usados pelos baselines."""
        if not isinstance(patient_id, str) or not patient_id:
            raise DatasetError("patient_id deve ser texto não vazio")
        if quarters < QUARTERS_PER_YEAR:
            raise DatasetError(f"observação precisa de pelo menos {QUARTERS_PER_YEAR} trimestres")
        if not isinstance(alive_or_insured, bool):
            raise DatasetError("alive_or_insured deve ser booleano")
        coded = tuple(coded_events)
        numeric = tuple(numeric_events)
        for evento in (*coded, *numeric):
            if evento.quarter >= quarters:
                raise DatasetError(f"trimestre {evento.quarter} fora da observação (T={quarters})")
        if target is not None and not isinstance(target, CostVector):
            target = CostVector.from_mapping(target)
        ultimo_ano, media, disponivel = derive_prior_costs(numeric, quarters)
        return cls(
            patient_id=patient_id,
            coded_events=coded,
            numeric_events=numeric,
            target=target,
            alive_or_insured=alive_or_insured,
            quarters=quarters,
            last_year_cost=ultimo_ano,
            mean_prior_cost=media,
            costs_available=disponivel,
        )

    def to_json_dict(self) -> dict:
        dados = {
            "patient_id": self.patient_id,
            "events": [{"kind": e.kind.value, "code": e.code, "quarter": e.quarter} for e in self.coded_events],
            "numerics": [{"name": e.name, "value": e.value, "quarter": e.quarter} for e in self.numeric_events],
        }
        if self.target is not None:
            dados["target"] = self.target.to_mapping()
        dados["alive_or_insured"] = self.alive_or_insured
        return dados

    @classmethod
    def from_json_dict(cls, dados: Mapping, quarters: int) -> "ClaimsRecord":
        if not isinstance(dados, Mapping):
            raise DatasetError("linha não é um objeto JSON")
        try:
            eventos = [CodedEvent(e["kind"], e["code"], e["quarter"]) for e in dados.get("events", [])]
            numericos = [NumericEvent(e["name"], e["value"], e["quarter"]) for e in dados.get("numerics", [])]
        except (KeyError, TypeError) as e:
            raise DatasetError(f"evento malformado: {e}") from e
        return cls.build(
            patient_id=dados.get("patient_id"),
            coded_events=eventos,
            numeric_events=numericos,
            target=dados.get("target"),
            alive_or_insured=dados.get("alive_or_insured", True),
            quarters=quarters,
        )


def load_dataset(path: str | Path, schema: str = "jsonl", quarters: int = 24) -> list[ClaimsRecord]:
    """Lê um arquivo JSONL preservando a ordem das linhas."""
    if schema != "jsonl":
        raise DatasetError(f"formato de dados não suportado: {schema}")
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"arquivo de dados não encontrado: {path}")

    fichas: list[ClaimsRecord] = []
    vistos: set[str] = set()
    with path.open(encoding="utf-8") as arquivo:
        for numero, linha in enumerate(arquivo, start=1):
            if not linha.strip():
                continue
            try:
                bruto = json.loads(linha)
            except json.JSONDecodeError as e:
                raise DatasetError(f"JSON inválido ({e.msg})", linha=numero) from e
            try:
                ficha = ClaimsRecord.from_json_dict(bruto, quarters)
            except DatasetError as e:
                raise DatasetError(str(e), linha=numero) from e
            if ficha.patient_id in vistos:
                raise DatasetError(f"patient_id duplicado: {ficha.patient_id}", linha=numero)
            vistos.add(ficha.patient_id)
            fichas.append(ficha)

    logger.info("Carregadas %s fichas de %s", len(fichas), path)
    return fichas


def write_dataset(records: Iterable[ClaimsRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    total = 0
    with path.open("w", encoding="utf-8") as arquivo:
        for ficha in records:
            arquivo.write(json.dumps(ficha.to_json_dict(), ensure_ascii=False, separators=(",", ":")))
            arquivo.write("\n")
            total += 1
    logger.info("Gravadas %s fichas em %s", total, path)
    return path


def split_dataset(
    records: Sequence,
    train_fraction: float,
    seed: int = 0,
    mode: str = "positional",
) -> tuple[list, list]:
    """
    Particiona em treino/teste. O modo posicional usa as primeiras
    ceil(n * fração) fichas; o embaralhado sorteia com a semente, mantendo a
    ordem original dentro de cada parte.
    """
    if not 0 < train_fraction < 1:
        raise DatasetError(f"train_fraction deve estar em (0, 1): {train_fraction}")
    n = len(records)
    if n < 2:
        raise DatasetError("são necessárias pelo menos 2 fichas para particionar")
    n_treino = math.ceil(round(n * train_fraction, 9))
    n_treino = min(max(n_treino, 1), n - 1)

    if mode == "positional":
        return list(records[:n_treino]), list(records[n_treino:])
    if mode == "shuffled":
        ordem = gerador(seed, "split").permutation(n)
        treino = np.sort(ordem[:n_treino])
        teste = np.sort(ordem[n_treino:])
        return [records[i] for i in treino], [records[i] for i in teste]
    raise DatasetError(f"modo de partição desconhecido: {mode}")

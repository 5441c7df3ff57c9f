"""
Gerador de populações sintéticas com processo de custo conhecido.

Custo futuro por categoria c (sem ruído)::

    f_c = sum_eventos a[code] * w(q) * share[kind][c]
        + age_effect * idade_no_ultimo_trimestre * AGE_SHARES[c]
        + interaction_strength * sum_pares m[a, b] * tem(a) * tem(b) * INTERACTION_SHARES[c]

com w(q) = 1 + (recency_weight - 1) * q / (T - 1). O alvo observado é f
multiplicado por um fator log-normal comum exp(s * e - s^2 / 2), s = noise_scale.
Os custos passados (eventos ``cost_total``) somam, por trimestre, os efeitos
aditivos dos eventos daquele trimestre fora o auxílio-doença, com o mesmo ruído.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from custos.services.claims_data import (
    COST_CATEGORIES,
    COST_EVENT_NAME,
    INCAPACITY_INDEX,
    N_CATEGORIES,
    ClaimsRecord,
    CodedEvent,
    EventKind,
    NumericEvent,
    QUARTERS_PER_YEAR,
)
from custos.services.sementes import gerador

logger = logging.getLogger(__name__)


class SyntheticSpecError(Exception): ...


AGE_EVENT_NAME = "age"
SEX_CODES = ("female", "male")

KIND_PREFIXES = {
    EventKind.ICD10: "D",
    EventKind.ATC: "A",
    EventKind.DRG: "G",
    EventKind.OPS: "P",
    EventKind.FG: "F",
    EventKind.GOP: "O",
    EventKind.OTHER: "X",
}

DEFAULT_VOCAB_SIZES = {
    EventKind.ICD10: 60,
    EventKind.ATC: 40,
    EventKind.DRG: 15,
    EventKind.OPS: 25,
    EventKind.FG: 10,
    EventKind.GOP: 50,
}

# Proporção de eventos por tipo
KIND_WEIGHTS = {
    EventKind.ICD10: 0.30,
    EventKind.ATC: 0.25,
    EventKind.DRG: 0.03,
    EventKind.OPS: 0.07,
    EventKind.FG: 0.10,
    EventKind.GOP: 0.25,
    EventKind.OTHER: 0.05,
}

# Efeito aditivo mediano (Euro por ocorrência)
KIND_BASE_EFFECT = {
    EventKind.ICD10: 20.0,
    EventKind.ATC: 15.0,
    EventKind.DRG: 120.0,
    EventKind.OPS: 60.0,
    EventKind.FG: 10.0,
    EventKind.GOP: 8.0,
    EventKind.OTHER: 5.0,
}
SEX_EFFECTS = {"female": 1.0, "male": 1.5}

# Distribuição do custo de cada tipo entre as categorias (na ordem de COST_CATEGORIES)
KIND_SHARES = {
    EventKind.ICD10: (0.20, 0.30, 0.30, 0.05, 0.05, 0.10, 0.00),
    EventKind.ATC: (0.90, 0.05, 0.00, 0.05, 0.00, 0.00, 0.00),
    EventKind.DRG: (0.00, 0.00, 0.90, 0.00, 0.00, 0.10, 0.00),
    EventKind.OPS: (0.00, 0.20, 0.70, 0.05, 0.05, 0.00, 0.00),
    EventKind.FG: (0.00, 0.60, 0.00, 0.00, 0.10, 0.00, 0.30),
    EventKind.GOP: (0.05, 0.80, 0.00, 0.05, 0.00, 0.00, 0.10),
    EventKind.SEX: (0.20, 0.30, 0.20, 0.10, 0.10, 0.05, 0.05),
    EventKind.OTHER: (0.10, 0.40, 0.10, 0.10, 0.10, 0.10, 0.10),
}
AGE_SHARES = (0.25, 0.30, 0.25, 0.05, 0.05, 0.05, 0.05)
INTERACTION_SHARES = (0.10, 0.10, 0.70, 0.05, 0.05, 0.00, 0.00)


@dataclass(frozen=True)
class SyntheticSpec:
    n_patients: int = 2000
    vocab_sizes: dict = field(default_factory=lambda: dict(DEFAULT_VOCAB_SIZES))
    quarters: int = 24
    seed: int = 0
    interaction_strength: float = 1.0
    noise_scale: float = 0.3
    n_interactions: int = 5
    events_per_quarter: float = 3.0
    recency_weight: float = 3.0
    age_effect: float = 4.0
    pair_prevalence: float = 0.06
    quiet_fraction: float = 0.3
    ineligible_fraction: float = 0.03

    def validate(self) -> None:
        if self.n_patients < 1:
            raise SyntheticSpecError("n_patients deve ser positivo")
        if self.quarters < QUARTERS_PER_YEAR:
            raise SyntheticSpecError(f"T deve ser pelo menos {QUARTERS_PER_YEAR}")
        if not self.vocab_sizes:
            raise SyntheticSpecError("vocab_sizes vazio")
        for kind, tamanho in self.vocab_sizes.items():
            kind = EventKind(kind)
            if kind == EventKind.SEX:
                raise SyntheticSpecError("o vocabulário de SEX é fixo (female, male)")
            if tamanho < 1:
                raise SyntheticSpecError(f"tamanho de vocabulário inválido para {kind.value}: {tamanho}")
        if self.interaction_strength < 0 or self.noise_scale < 0:
            raise SyntheticSpecError("interaction_strength e noise_scale devem ser >= 0")
        if self.seed < 0:
            raise SyntheticSpecError("seed deve ser não negativa")
        if self.recency_weight <= 0 or self.events_per_quarter <= 0:
            raise SyntheticSpecError("recency_weight e events_per_quarter devem ser positivos")
        for nome in ("pair_prevalence", "quiet_fraction", "ineligible_fraction"):
            if not 0 <= getattr(self, nome) <= 1:
                raise SyntheticSpecError(f"{nome} deve estar em [0, 1]")
        candidatos = sum(
            int(t) for k, t in self.vocab_sizes.items() if EventKind(k) in (EventKind.ICD10, EventKind.ATC)
        )
        if self.n_interactions < 0 or self.n_interactions * 2 > candidatos:
            raise SyntheticSpecError("n_interactions exige mais códigos ICD10/ATC do que o vocabulário oferece")


@dataclass(frozen=True)
class GroundTruth:
    """Tabela de efeitos usada pelo gerador; serve de oráculo nos testes."""

    quarters: int
    recency_weight: float
    interaction_strength: float
    age_effect: float
    additive: dict            # (kind, code) -> Euro por ocorrência
    interactions: tuple       # ((code_a, code_b, multiplicative_effect), ...)

    @property
    def linear(self) -> bool:
        return self.interaction_strength == 0 or not self.interactions

    def weight(self, quarter: int) -> float:
        if self.quarters == 1:
            return self.recency_weight
        return 1.0 + (self.recency_weight - 1.0) * quarter / (self.quarters - 1)

    def evaluate(self, record: ClaimsRecord) -> np.ndarray:
        """Custo futuro sem ruído da ficha, por categoria."""
        custo = np.zeros(N_CATEGORIES)
        for evento in record.coded_events:
            efeito = self.additive.get((evento.kind, evento.code))
            if efeito is None:
                continue
            custo += efeito * self.weight(evento.quarter) * np.asarray(KIND_SHARES[evento.kind])
        idades = [e for e in record.numeric_events if e.name == AGE_EVENT_NAME and e.quarter == self.quarters - 1]
        if idades:
            custo += self.age_effect * idades[-1].value * np.asarray(AGE_SHARES)
        if not self.linear:
            presentes = {e.code for e in record.coded_events}
            extra = sum(m for a, b, m in self.interactions if a in presentes and b in presentes)
            custo += self.interaction_strength * extra * np.asarray(INTERACTION_SHARES)
        return custo

    def strongest_interaction(self) -> tuple[str, str]:
        if not self.interactions:
            raise SyntheticSpecError("não há interações plantadas")
        a, b, _ = max(self.interactions, key=lambda par: par[2])
        return a, b

    def effects_frame(self) -> pd.DataFrame:
        linhas = [
            {"kind": kind.value, "code": code, "additive_effect": efeito}
            for (kind, code), efeito in self.additive.items()
        ]
        linhas.append({"kind": "NUMERIC", "code": AGE_EVENT_NAME, "additive_effect": self.age_effect})
        return pd.DataFrame(linhas, columns=["kind", "code", "additive_effect"])

    def interactions_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"code_a": a, "code_b": b, "multiplicative_effect": m} for a, b, m in self.interactions],
            columns=["code_a", "code_b", "multiplicative_effect"],
        )

    def summary(self) -> dict:
        return {
            "quarters": self.quarters,
            "recency_weight": self.recency_weight,
            "interaction_strength": self.interaction_strength,
            "age_effect": self.age_effect,
            "linear": self.linear,
            "categories": list(COST_CATEGORIES),
            "kind_shares": {k.value: list(v) for k, v in KIND_SHARES.items()},
            "age_shares": list(AGE_SHARES),
            "interaction_shares": list(INTERACTION_SHARES),
        }


@dataclass(frozen=True)
class SyntheticDataset:
    records: list
    truth: GroundTruth


def _codigos(kind: EventKind, tamanho: int) -> list[str]:
    return [f"{KIND_PREFIXES[kind]}{i:04d}" for i in range(tamanho)]


def _popularidade(tamanho: int) -> np.ndarray:
    pesos = 1.0 / np.arange(1, tamanho + 1) ** 0.7
    return pesos / pesos.sum()


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Gera fichas e a tabela de efeitos; função pura dos parâmetros."""
    spec.validate()
    rng = gerador(spec.seed, "synthetic")
    T = spec.quarters

    tamanhos = {EventKind(k): int(v) for k, v in spec.vocab_sizes.items()}
    kinds = list(tamanhos)
    codigos = {k: _codigos(k, tamanhos[k]) for k in kinds}
    popularidade = {k: _popularidade(len(codigos[k])) for k in kinds}
    pesos_kind = np.array([KIND_WEIGHTS[k] for k in kinds])
    pesos_kind = pesos_kind / pesos_kind.sum()

    aditivos: dict = {}
    for kind in kinds:
        efeitos = KIND_BASE_EFFECT[kind] * np.exp(rng.normal(0.0, 0.8, size=len(codigos[kind])))
        for code, efeito in zip(codigos[kind], efeitos):
            aditivos[(kind, code)] = float(efeito)
    for sexo in SEX_CODES:
        aditivos[(EventKind.SEX, sexo)] = SEX_EFFECTS[sexo]

    # Pares plantados entre diagnósticos e medicamentos fora dos mais frequentes
    candidatos = [c for k in kinds if k in (EventKind.ICD10, EventKind.ATC) for c in codigos[k][3:]]
    if len(candidatos) < 2 * spec.n_interactions:
        candidatos = [c for k in kinds if k in (EventKind.ICD10, EventKind.ATC) for c in codigos[k]]
    escolhidos = rng.choice(len(candidatos), size=2 * spec.n_interactions, replace=False)
    magnitudes = rng.uniform(2000.0, 6000.0, size=spec.n_interactions)
    interacoes = tuple(
        (candidatos[escolhidos[2 * i]], candidatos[escolhidos[2 * i + 1]], float(magnitudes[i]))
        for i in range(spec.n_interactions)
    )
    kind_do_codigo = {code: kind for (kind, code) in aditivos}

    truth = GroundTruth(
        quarters=T,
        recency_weight=spec.recency_weight,
        interaction_strength=spec.interaction_strength,
        age_effect=spec.age_effect,
        additive=aditivos,
        interactions=interacoes,
    )

    shares_sem_incapacidade = {
        kind: 1.0 - KIND_SHARES[kind][INCAPACITY_INDEX] for kind in (*kinds, EventKind.SEX)
    }

    fichas = []
    for p in range(spec.n_patients):
        sexo = SEX_CODES[int(rng.integers(2))]
        idade0 = int(rng.integers(0, 90))
        atividade = rng.gamma(0.8, spec.events_per_quarter / 0.8)
        quieto = rng.random() < spec.quiet_fraction

        taxas = np.full(T, atividade)
        if quieto:
            taxas[T - QUARTERS_PER_YEAR:] = 0.0
        trimestres = np.repeat(np.arange(T), rng.poisson(taxas))
        tipos = rng.choice(len(kinds), size=trimestres.size, p=pesos_kind)

        eventos = [CodedEvent(EventKind.SEX, sexo, q) for q in range(T)]
        numericos: list[NumericEvent] = []
        for j, kind in enumerate(kinds):
            posicoes = np.flatnonzero(tipos == j)
            if posicoes.size == 0:
                continue
            escolhas = rng.choice(len(codigos[kind]), size=posicoes.size, p=popularidade[kind])
            for posicao, escolha in zip(posicoes, escolhas):
                eventos.append(CodedEvent(kind, codigos[kind][int(escolha)], int(trimestres[posicao])))
        for a, b, _ in interacoes:
            if rng.random() < spec.pair_prevalence:
                for code in (a, b):
                    eventos.append(CodedEvent(kind_do_codigo[code], code, int(rng.integers(T))))
        eventos.sort(key=lambda e: e.quarter)

        custos_trimestre = np.zeros(T)
        for e in eventos:
            custos_trimestre[e.quarter] += aditivos[(e.kind, e.code)] * shares_sem_incapacidade[e.kind]
        for q in range(T):
            ruido_q = np.exp(spec.noise_scale * rng.normal() - spec.noise_scale ** 2 / 2)
            numericos.append(NumericEvent(AGE_EVENT_NAME, idade0 + q / QUARTERS_PER_YEAR, q))
            numericos.append(NumericEvent(COST_EVENT_NAME, float(custos_trimestre[q] * ruido_q), q))

        elegivel = rng.random() >= spec.ineligible_fraction
        base = ClaimsRecord.build(
            patient_id=f"P{p:06d}",
            coded_events=eventos,
            numeric_events=numericos,
            alive_or_insured=elegivel,
            quarters=T,
        )
        ruido = np.exp(spec.noise_scale * rng.normal() - spec.noise_scale ** 2 / 2)
        alvo = truth.evaluate(base) * ruido
        fichas.append(
            ClaimsRecord.build(
                patient_id=base.patient_id,
                coded_events=eventos,
                numeric_events=numericos,
                target=dict(zip(COST_CATEGORIES, (float(v) for v in alvo))),
                alive_or_insured=elegivel,
                quarters=T,
            )
        )

    logger.info(
        "Gerados %s pacientes sintéticos (semente %s, %s interações)",
        len(fichas), spec.seed, len(interacoes),
    )
    return SyntheticDataset(records=fichas, truth=truth)


def write_ground_truth(truth: GroundTruth, directory: str | Path) -> dict[str, Path]:
    """Grava effects.csv, interactions.csv e ground_truth.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    caminhos = {
        "effects": directory / "effects.csv",
        "interactions": directory / "interactions.csv",
        "ground_truth": directory / "ground_truth.json",
    }
    truth.effects_frame().to_csv(caminhos["effects"], index=False)
    truth.interactions_frame().to_csv(caminhos["interactions"], index=False)
    caminhos["ground_truth"].write_text(json.dumps(truth.summary(), indent=2, sort_keys=True), encoding="utf-8")
    return caminhos

"""
Vocabulário de códigos e codificação trimestral esparsa.

Layout do vetor de um paciente: T blocos (um por trimestre) de V_total colunas;
dentro do bloco vêm primeiro as V colunas categóricas (ordenadas por
(kind, code)) e depois uma coluna por nome numérico. A coluna do par
(trimestre q, coluna j) é ``q * V_total + j``.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from custos.services.claims_data import (
    ClaimsRecord,
    EventKind,
    QUARTERS_PER_YEAR,
    derive_prior_costs,
)

logger = logging.getLogger(__name__)

NUMERIC_KIND = "NUMERIC"
MAX_KEEP_YEARS = 6


class VocabularyError(Exception): ...


@dataclass(frozen=True)
class SparseFeatureVector:
    dimension: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.shape != values.shape or indices.ndim != 1:
            raise VocabularyError("indices e values precisam ter o mesmo comprimento")
        if indices.size:
            if np.any(np.diff(indices) <= 0):
                raise VocabularyError("indices precisam ser estritamente crescentes")
            if indices[0] < 0 or indices[-1] >= self.dimension:
                raise VocabularyError(f"índice fora da dimensão {self.dimension}")
            if not np.all(np.isfinite(values)) or np.any(values == 0):
                raise VocabularyError("valores precisam ser finitos e não nulos")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        denso = np.zeros(self.dimension)
        denso[self.indices] = self.values
        return denso

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.values, self.indices, np.array([0, self.nnz])), shape=(1, self.dimension)
        )


@dataclass(frozen=True)
class CodeVocabulary:
    """Mapa (kind, code) -> coluna, já filtrado por ``min_count``."""

    entries: dict
    counts: dict
    min_count: int
    numeric_names: tuple[str, ...] = ()
    numeric_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        colunas = sorted(self.entries.values())
        if colunas != list(range(len(colunas))):
            raise VocabularyError("colunas do vocabulário precisam ser densas (0..V-1)")

    @property
    def size(self) -> int:
        """V: número de colunas categóricas."""
        return len(self.entries)

    @property
    def block_width(self) -> int:
        """V_total: colunas por trimestre (categóricas + numéricas)."""
        return len(self.entries) + len(self.numeric_names)

    def dimension(self, quarters: int) -> int:
        return quarters * self.block_width

    def column_of(self, kind: EventKind | str, code: str) -> int | None:
        return self.entries.get((EventKind(kind), code))

    def numeric_column(self, name: str) -> int | None:
        try:
            return self.size + self.numeric_names.index(name)
        except ValueError:
            return None

    def describe_column(self, coluna: int) -> tuple[int, str, str]:
        """Retorna (trimestre, kind, code) de uma coluna do vetor concatenado."""
        trimestre, j = divmod(int(coluna), self.block_width)
        return (trimestre, *self.labels()[j])

    def labels(self) -> list[tuple[str, str]]:
        """(kind, code) de cada coluna do bloco trimestral, na ordem das colunas."""
        rotulos = [None] * self.block_width
        for (kind, code), j in self.entries.items():
            rotulos[j] = (kind.value, code)
        for i, nome in enumerate(self.numeric_names):
            rotulos[self.size + i] = (NUMERIC_KIND, nome)
        return rotulos

    def to_frame(self) -> pd.DataFrame:
        linhas = [
            {"kind": kind.value, "code": code, "column_index": j, "count": self.counts[(kind, code)]}
            for (kind, code), j in self.entries.items()
        ]
        linhas += [
            {"kind": NUMERIC_KIND, "code": nome, "column_index": self.size + i, "count": self.numeric_counts.get(nome, 0)}
            for i, nome in enumerate(self.numeric_names)
        ]
        return pd.DataFrame(linhas, columns=["kind", "code", "column_index", "count"])

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def from_csv(cls, path: str | Path, min_count: int = 0) -> "CodeVocabulary":
        """O limiar não vai no CSV; quem carrega informa o usado no treino (manifesto)."""
        path = Path(path)
        if not path.is_file():
            raise VocabularyError(f"vocabulário não encontrado: {path}")
        tabela = pd.read_csv(path, dtype={"kind": str, "code": str}, keep_default_na=False)
        if list(tabela.columns) != ["kind", "code", "column_index", "count"]:
            raise VocabularyError(f"colunas inesperadas no vocabulário {path}: {list(tabela.columns)}")
        entries, counts, numericos, numeric_counts = {}, {}, [], {}
        for linha in tabela.sort_values("column_index").to_dict("records"):
            if linha["kind"] == NUMERIC_KIND:
                numericos.append(linha["code"])
                numeric_counts[linha["code"]] = int(linha["count"])
            else:
                chave = (EventKind(linha["kind"]), linha["code"])
                entries[chave] = int(linha["column_index"])
                counts[chave] = int(linha["count"])
        return cls(entries, counts, min_count, tuple(numericos), numeric_counts)


def build_vocabulary(
    records: Sequence[ClaimsRecord],
    min_count: int,
    numeric_names: Sequence[str] | None = None,
) -> CodeVocabulary:
    """
    Mantém um código se o total de ocorrências no corpus for estritamente maior
    que ``min_count``. Conta ocorrências (eventos), não pacientes distintos.
    """
    if not records:
        raise VocabularyError("corpus vazio para construir o vocabulário")
    if min_count < 0:
        raise VocabularyError(f"min_count inválido: {min_count}")

    contagem = Counter((e.kind, e.code) for ficha in records for e in ficha.coded_events)
    contagem_numerica = Counter(e.name for ficha in records for e in ficha.numeric_events)

    retidos = sorted((chave for chave, n in contagem.items() if n > min_count), key=lambda c: (c[0].value, c[1]))
    entries = {chave: j for j, chave in enumerate(retidos)}
    counts = {chave: contagem[chave] for chave in retidos}

    if numeric_names is None:
        numeric_names = sorted(contagem_numerica)
    vocab = CodeVocabulary(
        entries=entries,
        counts=counts,
        min_count=min_count,
        numeric_names=tuple(numeric_names),
        numeric_counts={nome: contagem_numerica.get(nome, 0) for nome in numeric_names},
    )
    logger.info(
        "Vocabulário com %s códigos (de %s observados, min_count=%s) e %s numéricos",
        vocab.size, len(contagem), min_count, len(vocab.numeric_names),
    )
    return vocab


def _acumular(record: ClaimsRecord, vocab: CodeVocabulary, quarters: int) -> dict[int, float]:
    largura = vocab.block_width
    valores: dict[int, float] = {}
    for evento in record.coded_events:
        if evento.quarter >= quarters:
            raise VocabularyError(f"trimestre {evento.quarter} fora da observação (T={quarters})")
        j = vocab.entries.get((evento.kind, evento.code))
        if j is None:
            continue
        coluna = evento.quarter * largura + j
        valores[coluna] = valores.get(coluna, 0.0) + 1.0
    for evento in record.numeric_events:
        if evento.quarter >= quarters:
            raise VocabularyError(f"trimestre {evento.quarter} fora da observação (T={quarters})")
        j = vocab.numeric_column(evento.name)
        if j is None:
            continue
        coluna = evento.quarter * largura + j
        valores[coluna] = valores.get(coluna, 0.0) + evento.value
    return valores


def encode(record: ClaimsRecord, vocab: CodeVocabulary, quarters: int) -> SparseFeatureVector:
    """Codifica a ficha; códigos fora do vocabulário são descartados."""
    valores = _acumular(record, vocab, quarters)
    colunas = sorted(c for c, v in valores.items() if v != 0.0)
    return SparseFeatureVector(
        dimension=vocab.dimension(quarters),
        indices=np.array(colunas, dtype=np.int64),
        values=np.array([valores[c] for c in colunas], dtype=np.float64),
    )


def encode_many(records: Iterable[ClaimsRecord], vocab: CodeVocabulary, quarters: int) -> sparse.csr_matrix:
    """Matriz CSR (n x d) com uma linha por ficha."""
    indptr, indices, data = [0], [], []
    for ficha in records:
        vetor = encode(ficha, vocab, quarters)
        indices.append(vetor.indices)
        data.append(vetor.values)
        indptr.append(indptr[-1] + vetor.nnz)
    n = len(indptr) - 1
    return sparse.csr_matrix(
        (
            np.concatenate(data) if data else np.zeros(0),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
            np.array(indptr, dtype=np.int64),
        ),
        shape=(n, vocab.dimension(quarters)),
    )


def truncate_observation(record: ClaimsRecord, keep_years: int) -> ClaimsRecord:
    """
    Mantém apenas os últimos ``keep_years`` anos da observação e reindexa os
    trimestres a partir de 0. O alvo não muda; os custos anteriores são
    recalculados sobre a janela mantida.
    """
    if isinstance(keep_years, bool) or not isinstance(keep_years, int) or not 1 <= keep_years <= MAX_KEEP_YEARS:
        raise VocabularyError(f"keep_years deve estar em [1, {MAX_KEEP_YEARS}]: {keep_years}")
    T = record.quarters
    mantidos = keep_years * QUARTERS_PER_YEAR
    if mantidos > T:
        raise VocabularyError(f"keep_years={keep_years} excede a observação de {T} trimestres")
    if mantidos == T:
        return record

    corte = T - mantidos
    eventos = tuple(replace(e, quarter=e.quarter - corte) for e in record.coded_events if e.quarter >= corte)
    numericos = tuple(replace(e, quarter=e.quarter - corte) for e in record.numeric_events if e.quarter >= corte)
    ultimo_ano, media, disponivel = derive_prior_costs(numericos, mantidos)
    return replace(
        record,
        coded_events=eventos,
        numeric_events=numericos,
        quarters=mantidos,
        last_year_cost=ultimo_ano,
        mean_prior_cost=media,
        costs_available=disponivel,
    )


def coverage(records: Sequence[ClaimsRecord], vocab: CodeVocabulary) -> float:
    """Fração dos eventos codificados cobertos pelo vocabulário."""
    total = sum(len(f.coded_events) for f in records)
    if total == 0:
        return math.nan
    cobertos = sum(1 for f in records for e in f.coded_events if (e.kind, e.code) in vocab.entries)
    return cobertos / total

"""
Formato binário dos modelos treinados.

Layout (little-endian)::

    cabeçalho  : magic b"CUSTOSNN" | versão u16 | n_membros u16 | combinação u8
    membro     : tipo u8 | d u32 | H u32 | C u32 | dropout f8 | lambda f8
                 | output_scale f8 | n_blocos u32
    bloco      : ndim u8 | linhas u32 | colunas u32 | dados f8 em ordem de linha
    rodapé     : crc32 u32 de tudo o que vem antes

Tipos de membro: 1 = rede, 2 = ridge. Combinação: 0 = média dos membros (um
membro = modelo simples), 1 = categoria c vem do membro c.
"""
import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from custos.services.baselines import RidgeModel, RidgeParameters
from custos.services.network import NetworkParameters, NeuralNetworkModel
from custos.services.trainer import CategoryWiseModel, EnsembleModel

logger = logging.getLogger(__name__)

MAGIC = b"CUSTOSNN"
FORMAT_VERSION = 1

KIND_NETWORK = 1
KIND_RIDGE = 2

COMBINE_MEAN = 0
COMBINE_PER_CATEGORY = 1

_CABECALHO = struct.Struct("<8sHHB")
_MEMBRO = struct.Struct("<BIIIdddI")
_BLOCO = struct.Struct("<BII")
_RODAPE = struct.Struct("<I")


class ModelFileError(Exception): ...


def _empacotar_bloco(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim == 1:
        cabecalho = _BLOCO.pack(1, array.shape[0], 1)
    else:
        cabecalho = _BLOCO.pack(2, *array.shape)
    return cabecalho + array.tobytes(order="C")


def _empacotar_membro(modelo) -> bytes:
    if isinstance(modelo, NeuralNetworkModel):
        p = modelo.params
        blocos = [p.as_dict()[nome] for nome in NetworkParameters.NAMES]
        cabecalho = _MEMBRO.pack(
            KIND_NETWORK, p.input_dim, p.hidden, p.W5.shape[1],
            modelo.dropout_rate, 0.0, p.output_scale, len(blocos),
        )
    elif isinstance(modelo, RidgeModel):
        p = modelo.params
        blocos = [p.W, p.b]
        cabecalho = _MEMBRO.pack(
            KIND_RIDGE, p.input_dim, 0, p.n_outputs,
            0.0, modelo.lambda_, p.output_scale, len(blocos),
        )
    else:
        raise ModelFileError(f"membro de tipo não suportado: {type(modelo).__name__}")
    return cabecalho + b"".join(_empacotar_bloco(b) for b in blocos)


def _membros(modelo) -> tuple[list, int]:
    if isinstance(modelo, CategoryWiseModel):
        return list(modelo.members), COMBINE_PER_CATEGORY
    if isinstance(modelo, EnsembleModel):
        return list(modelo.members), COMBINE_MEAN
    return [modelo], COMBINE_MEAN


def to_bytes(modelo) -> bytes:
    membros, combinacao = _membros(modelo)
    corpo = _CABECALHO.pack(MAGIC, FORMAT_VERSION, len(membros), combinacao)
    corpo += b"".join(_empacotar_membro(m) for m in membros)
    return corpo + _RODAPE.pack(zlib.crc32(corpo))


class _Leitor:
    def __init__(self, dados: bytes):
        self.dados = memoryview(dados)
        self.posicao = 0

    def ler(self, estrutura: struct.Struct) -> tuple:
        fim = self.posicao + estrutura.size
        if fim > len(self.dados):
            raise ModelFileError("arquivo de modelo truncado")
        valores = estrutura.unpack_from(self.dados, self.posicao)
        self.posicao = fim
        return valores

    def ler_bloco(self) -> np.ndarray:
        ndim, linhas, colunas = self.ler(_BLOCO)
        if ndim not in (1, 2):
            raise ModelFileError(f"bloco com ndim inválido: {ndim}")
        tamanho = linhas * colunas * 8
        fim = self.posicao + tamanho
        if fim > len(self.dados):
            raise ModelFileError("arquivo de modelo truncado")
        array = np.frombuffer(self.dados[self.posicao:fim], dtype="<f8").astype(np.float64)
        self.posicao = fim
        return array if ndim == 1 else array.reshape(linhas, colunas)


def _ler_membro(leitor: _Leitor):
    tipo, d, H, C, dropout, lambda_, escala, n_blocos = leitor.ler(_MEMBRO)
    blocos = [leitor.ler_bloco() for _ in range(n_blocos)]
    if tipo == KIND_NETWORK:
        if n_blocos != len(NetworkParameters.NAMES):
            raise ModelFileError(f"rede com {n_blocos} blocos, esperado {len(NetworkParameters.NAMES)}")
        params = NetworkParameters(**dict(zip(NetworkParameters.NAMES, blocos)), output_scale=escala)
        if (params.input_dim, params.hidden) != (d, H):
            raise ModelFileError("dimensões do cabeçalho não conferem com os pesos")
        return NeuralNetworkModel(params=params, dropout_rate=dropout)
    if tipo == KIND_RIDGE:
        if n_blocos != 2:
            raise ModelFileError(f"ridge com {n_blocos} blocos, esperado 2")
        params = RidgeParameters(W=blocos[0], b=blocos[1], output_scale=escala)
        if (params.input_dim, params.n_outputs) != (d, C):
            raise ModelFileError("dimensões do cabeçalho não conferem com os pesos")
        return RidgeModel(params=params, lambda_=lambda_)
    raise ModelFileError(f"tipo de membro desconhecido: {tipo}")


def from_bytes(dados: bytes):
    if len(dados) < _CABECALHO.size + _RODAPE.size:
        raise ModelFileError("arquivo de modelo truncado")
    if bytes(dados[:len(MAGIC)]) != MAGIC:
        raise ModelFileError("arquivo não é um modelo (magic inválido)")
    corpo, (crc,) = dados[:-_RODAPE.size], _RODAPE.unpack(dados[-_RODAPE.size:])
    leitor = _Leitor(corpo)
    _, versao, n_membros, combinacao = leitor.ler(_CABECALHO)
    if versao != FORMAT_VERSION:
        raise ModelFileError(f"versão de formato {versao} não suportada (esperado {FORMAT_VERSION})")
    if zlib.crc32(corpo) != crc:
        raise ModelFileError("arquivo de modelo corrompido ou truncado (crc32 não confere)")
    membros = [_ler_membro(leitor) for _ in range(n_membros)]
    if leitor.posicao != len(corpo):
        raise ModelFileError("bytes sobrando após o último membro")
    if not membros:
        raise ModelFileError("modelo sem membros")

    if combinacao == COMBINE_PER_CATEGORY:
        return CategoryWiseModel(members=tuple(membros))
    if combinacao != COMBINE_MEAN:
        raise ModelFileError(f"modo de combinação desconhecido: {combinacao}")
    if len(membros) == 1:
        return membros[0]
    return EnsembleModel(members=tuple(membros))


def save_model(modelo, path: str | Path) -> Path:
    """Grava o modelo inteiro de uma vez; nada é escrito se a serialização falhar."""
    dados = to_bytes(modelo)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dados)
    logger.info("Modelo %s gravado em %s (%s bytes)", getattr(modelo, "kind", "?"), path, len(dados))
    return path


def load_model(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"arquivo de modelo não encontrado: {path}")
    return from_bytes(path.read_bytes())


def serialize(params: NetworkParameters, path: str | Path, dropout_rate: float = 0.25) -> Path:
    return save_model(NeuralNetworkModel(params=params, dropout_rate=dropout_rate), path)


def deserialize(path: str | Path) -> NetworkParameters:
    modelo = load_model(path)
    if not isinstance(modelo, NeuralNetworkModel):
        raise ModelFileError(f"{path} não contém uma rede única")
    return modelo.params

"""
Geradores aleatórios por finalidade.

Toda a aleatoriedade de uma execução sai de uma única semente; cada finalidade
recebe um fluxo próprio, de modo que ligar ou desligar uma etapa (ex.: dropout)
não altera os números sorteados pelas outras.
"""
import numpy as np

FINALIDADES = {
    "synthetic": 0,
    "split": 1,
    "init": 2,
    "shuffle": 3,
    "dropout": 4,
}


def gerador(seed: int, finalidade: str) -> np.random.Generator:
    """Retorna o gerador da finalidade informada para a semente da execução."""
    if finalidade not in FINALIDADES:
        raise ValueError(f"Finalidade desconhecida: {finalidade}")
    if seed < 0:
        raise ValueError(f"Semente deve ser não negativa: {seed}")
    sequencia = np.random.SeedSequence(entropy=int(seed), spawn_key=(FINALIDADES[finalidade],))
    return np.random.default_rng(sequencia)

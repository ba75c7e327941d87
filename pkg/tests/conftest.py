import pytest

from persorank.logs import label_sessions
from persorank.partition import select_targets
from persorank.synth import GenConfig, generate_sessions


class Corpus:
    def __init__(self, cfg, sessions, stats, targets, report, seed):
        self.cfg = cfg
        self.sessions = sessions
        self.stats = stats
        self.targets = targets
        self.report = report
        self.partition_seed = seed
        self.train_days = cfg.train_days


def make_corpus(gen_cfg: GenConfig, partition_seed: int = 5) -> Corpus:
    sessions, stats = generate_sessions(gen_cfg)
    label_sessions(sessions)
    targets, report = select_targets(
        sessions, train_days=gen_cfg.train_days, seed=partition_seed
    )
    return Corpus(gen_cfg, sessions, stats, targets, report, partition_seed)


@pytest.fixture(scope="session")
def small_corpus():
    """40 users, shared read-only across tests; do not mutate."""
    return make_corpus(
        GenConfig(
            n_users=40,
            queries_per_user_per_day=3,
            n_queries=300,
            n_terms=200,
            n_documents=1500,
            n_domains=120,
            preference_strength=0.9,
            repeat_query_prob=0.5,
            rng_seed=11,
        )
    )

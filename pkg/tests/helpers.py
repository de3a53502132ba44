from ldpquantile.config import ClientSpec, FederationConfig
from ldpquantile.distributions import Normal
from ldpquantile.scenarios import ScenarioSpec, make_scenario
from ldpquantile.schedule import build_schedule


def small_config(strategy="C1", total_samples=300, rate=0.9, tau=0.5, K=3, seed=11, warmup_frac=0.0, **kw):
    clients = tuple(ClientSpec(k, 1.0 / K, tau, rate, Normal(0.1 * k, 1.0)) for k in range(K))
    sched = build_schedule(strategy, total_samples=total_samples, warmup_frac=warmup_frac)
    return FederationConfig(clients, sched, master_seed=seed, **kw)


def scenario_config(preset="homogeneous", strategy="C1", total_samples=500, seed=0, warmup_frac=0.05, **spec):
    clients = make_scenario(ScenarioSpec(preset, **spec), seed)
    sched = build_schedule(strategy, total_samples=total_samples, warmup_frac=warmup_frac)
    return FederationConfig(tuple(clients), sched, master_seed=seed)

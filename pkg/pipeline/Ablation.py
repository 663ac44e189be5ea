"""Desk-scale ablations on a synthetic temporal task.

Three groups, each trained over several seeds with identical data and schedule:

variant    baseline / headtail / compact (one shuffle block per stage, no shift)
count      k = 0..4 compact blocks, in the last block of the first k stages
component  shift only / shuffle only / shift + shuffle
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.config import NetworkConfig, SyntheticTask, TrainConfig
from modules.training.trainer import train
from utils.helpers import atomic_write, progress
from utils.logger import Logger

GROUPS = ('variant', 'count', 'component')


def ablation_arms(backbone: str = 'toy') -> Dict[str, Dict[str, NetworkConfig]]:
    count_arms = {
        f"k={k}": NetworkConfig.from_preset(f"compact-{backbone}", shuffle_stages=list(range(k)))
        for k in range(5)
    }
    return {
        'variant': {
            'baseline': NetworkConfig.from_preset(f"tsn-{backbone}"),
            'headtail': NetworkConfig.from_preset(f"headtail-{backbone}"),
            'compact': NetworkConfig.from_preset(f"compact-{backbone}"),
        },
        'count': count_arms,
        'component': {
            'shift': NetworkConfig.from_preset(f"tsm-{backbone}"),
            'shuffle': NetworkConfig.from_preset(f"compact-{backbone}"),
            'shift+shuffle': NetworkConfig.from_preset(f"vsn-{backbone}"),
        },
    }


@dataclass
class OrderingCheck:
    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool


@dataclass
class AblationResult:
    records: List[dict] = field(default_factory=list)
    summary: Dict[str, Dict[str, float]] = field(default_factory=dict)
    checks: List[OrderingCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _at_least(name: str, lhs: float, rhs: float, slack: float = 0.0) -> OrderingCheck:
    return OrderingCheck(name=name, lhs=lhs, rhs=rhs, slack=slack, passed=lhs >= rhs - slack)


def ordering_checks(summary: Dict[str, Dict[str, float]]) -> List[OrderingCheck]:
    """Expected directions, accuracies as fractions (0.02 == two points)."""
    checks = []
    variant = summary.get('variant', {})
    if {'compact', 'headtail', 'baseline'} <= set(variant):
        checks.append(_at_least('compact >= headtail - 2', variant['compact'], variant['headtail'], 0.02))
        checks.append(_at_least('headtail >= baseline', variant['headtail'], variant['baseline']))
    count = summary.get('count', {})
    if {'k=0', 'k=4'} <= set(count):
        checks.append(_at_least('k=4 >= k=0 + 20', count['k=4'], count['k=0'] + 0.20))
    component = summary.get('component', {})
    if {'shift+shuffle', 'shuffle'} <= set(component):
        checks.append(_at_least('shift+shuffle >= shuffle - 2', component['shift+shuffle'],
                                component['shuffle'], 0.02))
    return checks


class Ablation():
    def __init__(self, task: SyntheticTask, train_cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2),
                 groups: Sequence[str] = GROUPS, backbone: str = 'toy'):
        self.logger = Logger.get_logger()
        unknown = set(groups) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown ablation groups {sorted(unknown)}; choose from {GROUPS}")
        self.task = task
        self.train_cfg = train_cfg
        self.seeds = list(seeds)
        self.arms = {g: arms for g, arms in ablation_arms(backbone).items() if g in groups}

    def run(self, records_path: Optional[Path] = None) -> AblationResult:
        result = AblationResult()
        # identical arms across groups train once per seed
        cache: Dict[tuple, float] = {}
        jobs = [(g, a, cfg, s) for g, arms in self.arms.items() for a, cfg in arms.items() for s in self.seeds]
        for group, arm, net_cfg, seed in progress(jobs, desc="ablation", total=len(jobs)):
            key = (net_cfg.model_dump_json(exclude={'preset'}), seed)
            if key not in cache:
                history = train(net_cfg, self.task, self.train_cfg.model_copy(update={'seed': seed}))
                cache[key] = history[-1].val_acc
            result.records.append({'group': group, 'arm': arm, 'seed': seed, 'preset': net_cfg.preset,
                                   'shuffle_blocks': sum(v.shuffles for row in net_cfg.variants() for v in row),
                                   'val_acc': cache[key]})
            self.logger.info(f"{group}/{arm} seed {seed}: val acc {cache[key]:.3f}")

        for group, arms in self.arms.items():
            result.summary[group] = {
                arm: float(np.median([r['val_acc'] for r in result.records
                                      if r['group'] == group and r['arm'] == arm]))
                for arm in arms
            }
        result.checks = ordering_checks(result.summary)
        for check in result.checks:
            self.logger.info(f"{check.name}: {check.lhs:.3f} vs {check.rhs:.3f} -> "
                             f"{'pass' if check.passed else 'FAIL'}")
        if records_path:
            write_ablation(result, records_path)
        return result


def write_ablation(result: AblationResult, path: Path) -> None:
    """Per-run records, then one summary line carrying medians and ordering checks."""
    with atomic_write(Path(path), 'w') as f:
        for rec in result.records:
            f.write(json.dumps(rec) + "\n")
        f.write(json.dumps({'summary': result.summary,
                            'checks': [c.__dict__ for c in result.checks],
                            'passed': result.passed}) + "\n")


def read_ablation_records(path: Path) -> List[dict]:
    with open(path, 'r', encoding='utf-8') as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return [r for r in rows if 'group' in r]


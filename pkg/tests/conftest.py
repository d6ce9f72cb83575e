import dataclasses

from prismnet.config import ExperimentConfig

SMALL = dict(n_steps=2000, window=64, horizons=(8,), patch_len=8, patch_stride=8, embed_dim=16,
             heads=2, text_dim=16, text_heads=2, gru_hidden=16, batch_size=8, epochs=2, patience=2,
             window_stride=8)


def small_cfg(**kw) -> ExperimentConfig:
    """Desk-sized experiment: 64-step windows, horizon 8, width 16."""
    cfg = ExperimentConfig(**{**SMALL, **kw})
    cfg.validate()
    return cfg


def with_(cfg, **kw):
    return dataclasses.replace(cfg, **kw)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

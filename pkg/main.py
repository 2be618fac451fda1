import logging
import tempfile
from pathlib import Path

from Gesme import build, evaluate, fit, importance_report, resolve
from Gesme.data import synth_generate

logging.basicConfig(level=logging.INFO)

run = resolve("table1", overrides={
    "synth.days": "6",
    "model.conv_filters": "4, 8",
    "model.convrnn_filters": "4, 8",
    "train.max_epochs": "5",
})


def main():
    out = Path(tempfile.mkdtemp(prefix="gesme-"))
    dataset = synth_generate(run.scenario, run.synth, out)

    model = build(run.model, dataset.roster())
    report = fit(model, dataset.samples("train"), dataset.samples("val"), run.train, out_dir=out / "gesme")

    for task, metrics in evaluate(model, dataset, "test", report.train_time_s).items():
        print(f"{task}: MAE={metrics.mae:.3f} RMSE={metrics.rmse:.3f} sMAPE={metrics.smape:.3f}")
    print(importance_report(model, dataset.samples("test")).weights)


main()

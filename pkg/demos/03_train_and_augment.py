"""Train the toy tagger, then run one and three rounds of augmentation.

The augmented model is retrained on training documents cut around its own
predictions; this is where the gains on gapped mentions come from.  Takes
roughly two minutes on one core.

Run: python demos/03_train_and_augment.py
"""

from seda.augment import SedaConfig, _resolve_model, newline_samples, run_mul, run_once
from seda.metrics import exact_prf
from seda.synthetic import generate_corpus, split_corpus
from seda.tagger.model import ModelConfig
from seda.tagger.train import complete, make_factory, predict_samples, train

docs = generate_corpus(200, seed=0)
parts = split_corpus(docs, (0.6, 0.2, 0.2))
tr, dev, test = parts["train"], parts["dev"], parts["test"]
cfg = ModelConfig()
seda_cfg = SedaConfig.preset("cadec")

print("training baseline on newline samples ...")
baseline = train(newline_samples(tr), cfg, dev_docs=dev, dev_samples=newline_samples(dev))
model = _resolve_model(baseline, dev, seda_cfg)
base_preds = complete(predict_samples(model, newline_samples(test)), test)

print("augmenting and retraining ...")
once = run_once(test, baseline, seda_cfg, dev_docs=dev, train_docs=tr, model_factory=make_factory(cfg))
mul = run_mul(test, baseline, SedaConfig.preset("cadec", max_iterations=3), dev_docs=dev, first=once)

gold = {d.id: list(d.gold) for d in test}
print(f"\n{'method':10s} {'F1':>6s} {'disc F1':>8s} {'cross F1':>9s} {'EBF':>6s}")
for name, preds in (("baseline", base_preds), ("once", once.predictions), ("mul", mul.predictions)):
    r = exact_prf(preds, gold, docs=test)
    print(f"{name:10s} {r.f1:6.3f} {r.subsets['discontinuous'].f1:8.3f} "
          f"{r.subsets['cross_sentence'].f1:9.3f} {r.ebf:6.3f}")

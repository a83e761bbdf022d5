"""
Teachers and a student
======================

A short run of the two-phase protocol on a small synthetic task. Epoch
counts are kept low so this finishes in well under a minute.
"""
from dataclasses import replace

from kdlandmarks.pipeline import (
    ExperimentConfig,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    predict_teachers,
    prepare_soft_labels,
    train_student,
    train_teacher,
)

data = generate_synthetic(SyntheticSpec(k=29, n_train=600, n_test=200, seed=0))
data, shape_model = prepare_soft_labels(data, m_tilde=0.9)
config = ExperimentConfig(teacher_epochs=40, student_epochs=40, seed=0)

tough = train_teacher(data, "hard", config)
tolerant = train_teacher(data, "soft", config)
print(f"final train L2: tough {tough.final_train_loss:.6f}, tolerant {tolerant.final_train_loss:.6f}")

# %%
# Teachers are frozen from here on; their outputs are computed once.
preds = predict_teachers(tough, tolerant, data)

for variant in ("L2", "KD-full"):
    student = train_student(data, preds, config, variant)
    report = evaluate(student, data, "test")
    print(f"{variant:8s} NME {report.nme_percent:.3f}%  FR {report.fr_percent:.2f}%  "
          f"AUC {report.auc:.4f}")

# %%
# Geometric augmentation is off by default. Turning it on rotates inputs,
# targets and cached teacher shapes together.
aug = replace(config.augment, enabled=True, flip_probability=0.0)
student = train_student(data, preds, replace(config, augment=aug, student_epochs=10))
print("augmented student NME %.3f%%" % evaluate(student, data).nme_percent)

//! Unseen and seen classifiers, the domain gate and fused GZSL prediction.

mod calibrate;
mod gate;
pub mod lbfgs;
mod predictor;
mod softmax;

pub use calibrate::{
    assemble_predictor, calibrate_gzsl, class_text, gate_rows, proxy_split, train_classifiers,
    Calibration,
};
pub use gate::{train_domain_gate, DomainGate};
pub use predictor::{fuse, GzslOutput, GzslPredictor, ZslPredictor, PREDICTOR_MAGIC};
pub use softmax::{
    argmax_by_id, softmax, temperature_topk_pool, train_seen_classifier, train_unseen_classifier,
    ClassifierSettings, SoftmaxClassifier,
};

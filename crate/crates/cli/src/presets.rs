//! Named hyperparameter sets for the benchmark datasets.

use shiftex::counterfactual::Architecture;
use shiftex::{ClassifierConfig, CounterfactualConfig, Method, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub method: Method,
    pub optimizer: OptimizerConfig,
}

const fn opt(learning_rate: f64, iterations: usize) -> OptimizerConfig {
    OptimizerConfig {
        learning_rate,
        iterations,
        seed: 0,
    }
}

fn hidden16(epochs: usize, learning_rate: f64) -> Method {
    Method::Dice {
        classifier: ClassifierConfig {
            architecture: Architecture::OneHidden { width: 16 },
            weight_decay: 1e-4,
            ..ClassifierConfig::logistic(epochs, learning_rate)
        },
        counterfactual: CounterfactualConfig::default(),
    }
}

pub fn all() -> Vec<Preset> {
    let kc = |k| Method::KCluster { k };
    // counterfactual methods do not use the optimizer block
    let unused = opt(1.0, 100);
    vec![
        Preset { name: "adult-kcluster", method: kc(10), optimizer: opt(10.0, 100) },
        Preset { name: "breast-kcluster", method: kc(4), optimizer: opt(10.0, 100) },
        Preset { name: "civil-kcluster", method: kc(4), optimizer: opt(20.0, 200) },
        Preset { name: "imagenet-kcluster", method: kc(5), optimizer: opt(150.0, 100) },
        Preset { name: "adult-ot", method: Method::Ot, optimizer: opt(0.05, 100) },
        Preset { name: "breast-ot", method: Method::Ot, optimizer: opt(1.0, 100) },
        Preset { name: "civil-ot", method: Method::Ot, optimizer: opt(0.1, 200) },
        Preset { name: "imagenet-ot", method: Method::Ot, optimizer: opt(0.5, 100) },
        Preset { name: "adult-dice", method: hidden16(100, 0.05), optimizer: unused },
        Preset { name: "breast-dice", method: hidden16(500, 0.2), optimizer: unused },
        Preset {
            name: "civil-dice",
            method: Method::Dice {
                classifier: ClassifierConfig::logistic(1000, 0.5),
                counterfactual: CounterfactualConfig::default(),
            },
            optimizer: unused,
        },
    ]
}

pub fn find(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}

pub fn names() -> Vec<&'static str> {
    all().iter().map(|p| p.name).collect()
}

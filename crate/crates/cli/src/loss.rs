use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use serde_json::json;
use srr3_core::losses::{
    composite_loss, cross_entropy_nll, info_nce, info_nce_grad, kl_divergence, triplet_margin,
};
use srr3_core::model::EmbeddingVector;

use crate::{CliError, CliResult};

/// Input for the `loss` subcommand, tagged by `loss`.
#[derive(Debug, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case", deny_unknown_fields)]
enum LossInput {
    InfoNce {
        query: Vec<f64>,
        docs: Vec<Vec<f64>>,
        positive: usize,
        #[serde(default = "default_tau")]
        temperature: f64,
        #[serde(default)]
        gradient: bool,
    },
    TripletMargin {
        query: Vec<f64>,
        positive: Vec<f64>,
        negative: Vec<f64>,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    Kl {
        p: Vec<f64>,
        q: Vec<f64>,
    },
    CrossEntropy {
        predicted: Vec<Vec<f64>>,
        targets: Vec<usize>,
    },
    Composite {
        components: [f64; 4],
        #[serde(default = "unit_weights")]
        weights: [f64; 4],
    },
}

fn default_tau() -> f64 {
    0.05
}

fn default_margin() -> f64 {
    0.15
}

fn unit_weights() -> [f64; 4] {
    [1.0; 4]
}

fn vector(v: Vec<f64>) -> Result<EmbeddingVector<f64>, CliError> {
    Ok(EmbeddingVector::new(v)?)
}

pub fn run(input: &Path) -> CliResult {
    let text = if input == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        std::fs::read_to_string(input)?
    };
    let out = match serde_json::from_str::<LossInput>(&text)? {
        LossInput::InfoNce {
            query,
            docs,
            positive,
            temperature,
            gradient,
        } => {
            let q = vector(query)?;
            let docs = docs
                .into_iter()
                .map(vector)
                .collect::<Result<Vec<_>, _>>()?;
            let loss = info_nce(&q, &docs, positive, temperature)?;
            if gradient {
                json!({"loss": loss, "gradient": info_nce_grad(&q, &docs, positive, temperature)?})
            } else {
                json!({"loss": loss})
            }
        }
        LossInput::TripletMargin {
            query,
            positive,
            negative,
            margin,
        } => {
            json!({"loss": triplet_margin(&vector(query)?, &vector(positive)?, &vector(negative)?, margin)?})
        }
        LossInput::Kl { p, q } => json!({"loss": kl_divergence(&p, &q)?}),
        LossInput::CrossEntropy { predicted, targets } => {
            json!({"loss": cross_entropy_nll(&predicted, &targets)?})
        }
        LossInput::Composite {
            components,
            weights,
        } => json!({"loss": composite_loss(components, weights)?}),
    };
    println!("{out}");
    Ok(())
}

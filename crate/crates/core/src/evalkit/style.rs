use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::backend::TextClassifier;

/// Which source a style classifier assigns each text to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleAttribution {
    /// Hard label per input text, in input order.
    pub per_text: Vec<String>,
    pub counts: IndexMap<String, usize>,
    /// Share of texts per source, summing to 100.
    pub percentages: IndexMap<String, f64>,
}

pub fn attribute_style(classifier: &TextClassifier, texts: &[String]) -> Result<StyleAttribution> {
    if texts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let per_text: Vec<String> = texts.iter().map(|t| classifier.predict(t)).collect();
    let mut counts: IndexMap<String, usize> = classifier.classes().iter().map(|c| (c.clone(), 0)).collect();
    for label in &per_text {
        *counts.get_mut(label).expect("prediction is a known class") += 1;
    }
    let percentages = counts.iter().map(|(k, v)| (k.clone(), 100.0 * *v as f64 / texts.len() as f64)).collect();
    Ok(StyleAttribution {
        per_text,
        counts,
        percentages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{train_style_classifier, ClassifierSpec};

    #[test]
    fn attributes_by_marker() {
        let a: Vec<String> = (0..60).map(|i| format!("moreover item {i} thing")).collect();
        let b: Vec<String> = (0..60).map(|i| format!("honestly item {i} thing")).collect();
        let clf = train_style_classifier("T5", &a, "Llama", &b, &ClassifierSpec::default()).unwrap();
        let mixed: Vec<String> = vec!["moreover x".into(), "honestly y".into(), "moreover z".into(), "honestly w".into()];
        let s = attribute_style(&clf, &mixed).unwrap();
        assert_eq!(s.counts["T5"], 2);
        assert!((s.percentages.values().sum::<f64>() - 100.0).abs() < 0.01);
        assert!(matches!(attribute_style(&clf, &[]), Err(EvalError::EmptyInput)));
    }
}

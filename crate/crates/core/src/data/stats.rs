use serde::{Deserialize, Serialize};

use super::{Example, Label, Language, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub class_percent: [f64; NUM_CLASSES],
    /// Counts over examples carrying a language tag.
    pub language_counts: [usize; 3],
    /// None when no example is tagged.
    pub language_percent: Option<[f64; 3]>,
}

impl ClassStats {
    pub fn percent(&self, label: Label) -> f64 {
        self.class_percent[label.index()]
    }

    pub fn language_percent(&self, lang: Language) -> Option<f64> {
        self.language_percent.map(|p| p[lang as usize])
    }
}

fn percentages(counts: &[usize; 3]) -> [f64; 3] {
    let n: usize = counts.iter().sum();
    counts.map(|c| 100.0 * c as f64 / n as f64)
}

pub fn class_stats(examples: &[Example]) -> Result<ClassStats> {
    if examples.is_empty() {
        return Err(Error::Empty("split".into()));
    }
    let mut class_counts = [0; NUM_CLASSES];
    let mut language_counts = [0; 3];
    for ex in examples {
        class_counts[ex.label.index()] += 1;
        if let Some(l) = ex.language {
            language_counts[l as usize] += 1;
        }
    }
    let tagged: usize = language_counts.iter().sum();
    Ok(ClassStats {
        total: examples.len(),
        class_counts,
        class_percent: percentages(&class_counts),
        language_counts,
        language_percent: (tagged > 0).then(|| percentages(&language_counts)),
    })
}

impl std::fmt::Display for ClassStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "examples\t{}", self.total)?;
        for l in Label::ALL {
            writeln!(
                f,
                "{}\t{}\t{:.2}%",
                l,
                self.class_counts[l.index()],
                self.class_percent[l.index()]
            )?;
        }
        if let Some(p) = self.language_percent {
            for l in Language::ALL {
                writeln!(f, "{}\t{}\t{:.2}%", l, self.language_counts[l as usize], p[l as usize])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_all_of_it() {
        let exs = vec![Example::new("a b", Label::Neutral); 4];
        let s = class_stats(&exs).unwrap();
        assert_eq!(s.percent(Label::Neutral), 100.0);
        assert_eq!(s.percent(Label::Negative), 0.0);
        assert_eq!(s.language_percent, None);
    }

    #[test]
    fn percentages_sum_to_hundred() {
        let mut exs = Vec::new();
        for (i, l) in [Label::Negative, Label::Positive, Label::Neutral, Label::Negative, Label::Positive, Label::Negative, Label::Negative]
            .into_iter()
            .enumerate()
        {
            let mut e = Example::new("a b", l);
            e.language = Some(Language::ALL[i % 3]);
            exs.push(e);
        }
        let s = class_stats(&exs).unwrap();
        assert!((s.class_percent.iter().sum::<f64>() - 100.0).abs() < 0.01);
        assert!((s.language_percent.unwrap().iter().sum::<f64>() - 100.0).abs() < 0.01);
        assert!((s.percent(Label::Negative) - 400.0 / 7.0).abs() < 1e-9);
        assert!(class_stats(&[]).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{HyperParams, KernelSpec};
use crate::error::Error;

/// Wire form: `{"variant", "variance", "lengthscales", "period", "children"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct KernelDoc {
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lengthscales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<KernelDoc>>,
}

impl From<&KernelSpec> for KernelDoc {
    fn from(k: &KernelSpec) -> Self {
        let leaf = |name: &str, hp: &HyperParams| KernelDoc {
            variant: name.to_string(),
            variance: Some(hp.variance),
            lengthscales: Some(hp.lengthscales.clone()),
            period: hp.period,
            children: None,
        };
        let node = |name: &str, c: Vec<KernelDoc>| KernelDoc {
            variant: name.to_string(),
            variance: None,
            lengthscales: None,
            period: None,
            children: Some(c),
        };
        match k {
            KernelSpec::Matern12(hp) => leaf("Matern12", hp),
            KernelSpec::Matern32(hp) => leaf("Matern32", hp),
            KernelSpec::Matern52(hp) => leaf("Matern52", hp),
            KernelSpec::QuasiPeriodicMatern32(hp) => leaf("QuasiPeriodicMatern32", hp),
            KernelSpec::Sum(c) => node("Sum", c.iter().map(KernelDoc::from).collect()),
            KernelSpec::Product(c) => node("Product", c.iter().map(KernelDoc::from).collect()),
            KernelSpec::Separable { spatial, temporal } => node(
                "Separable",
                vec![KernelDoc::from(spatial.as_ref()), KernelDoc::from(temporal.as_ref())],
            ),
        }
    }
}

impl TryFrom<KernelDoc> for KernelSpec {
    type Error = Error;

    fn try_from(doc: KernelDoc) -> Result<Self, Error> {
        let leaf = |doc: &KernelDoc| -> Result<HyperParams, Error> {
            if doc.children.is_some() {
                return Err(Error::input(format!("{} takes no children", doc.variant)));
            }
            Ok(HyperParams {
                variance: doc
                    .variance
                    .ok_or_else(|| Error::input(format!("{} needs a variance", doc.variant)))?,
                lengthscales: doc
                    .lengthscales
                    .clone()
                    .ok_or_else(|| Error::input(format!("{} needs lengthscales", doc.variant)))?,
                period: doc.period,
            })
        };
        let children = |doc: KernelDoc| -> Result<Vec<KernelSpec>, Error> {
            if doc.variance.is_some() || doc.lengthscales.is_some() || doc.period.is_some() {
                return Err(Error::input(format!(
                    "{} carries no hyperparameters of its own",
                    doc.variant
                )));
            }
            doc.children
                .unwrap_or_default()
                .into_iter()
                .map(KernelSpec::try_from)
                .collect()
        };
        let spec = match doc.variant.as_str() {
            "Matern12" => KernelSpec::Matern12(leaf(&doc)?),
            "Matern32" => KernelSpec::Matern32(leaf(&doc)?),
            "Matern52" => KernelSpec::Matern52(leaf(&doc)?),
            "QuasiPeriodicMatern32" => KernelSpec::QuasiPeriodicMatern32(leaf(&doc)?),
            "Sum" => KernelSpec::Sum(children(doc)?),
            "Product" => KernelSpec::Product(children(doc)?),
            "Separable" => {
                let mut c = children(doc)?;
                if c.len() != 2 {
                    return Err(Error::input("Separable needs exactly [spatial, temporal] children"));
                }
                let temporal = c.pop().unwrap();
                let spatial = c.pop().unwrap();
                KernelSpec::separable(spatial, temporal)
            }
            other => return Err(Error::input(format!("unknown kernel variant `{other}`"))),
        };
        Ok(spec)
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        KernelDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = KernelDoc::deserialize(d)?;
        let spec = KernelSpec::try_from(doc).map_err(serde::de::Error::custom)?;
        spec.validate().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }
}

use serde::{Deserialize, Serialize};

use super::{build_tree_named, Interpolation, JointGraph};
use crate::error::{Error, Result};
use crate::skeleton;

/// JSON graph description: joint names, tree edges by name, interpolations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub joints: Vec<String>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub interpolate: Vec<InterpSpec>,
    /// Root of the serial route; defaults to `neck` when present, else the first joint.
    #[serde(default)]
    pub root: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpSpec {
    pub a: String,
    pub b: String,
    pub count: usize,
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self::skeleton14()
    }
}

impl GraphSpec {
    pub fn skeleton14() -> Self {
        let name = |i: usize| skeleton::JOINT_NAMES[i].to_string();
        GraphSpec {
            joints: skeleton::JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            edges: skeleton::TREE_EDGES.iter().map(|&(a, b)| (name(a), name(b))).collect(),
            interpolate: Vec::new(),
            root: Some(name(skeleton::NECK)),
        }
    }

    fn joint(&self, name: &str) -> Result<usize> {
        self.joints.iter().position(|j| j == name).ok_or_else(|| Error::Graph(format!("unknown joint {name:?}")))
    }

    pub fn build(&self) -> Result<JointGraph> {
        let edges = self.edges.iter().map(|(a, b)| Ok((self.joint(a)?, self.joint(b)?))).collect::<Result<Vec<_>>>()?;
        let interps = self
            .interpolate
            .iter()
            .map(|i| Ok(Interpolation { a: self.joint(&i.a)?, b: self.joint(&i.b)?, count: i.count, fractions: i.fractions.clone() }))
            .collect::<Result<Vec<_>>>()?;
        build_tree_named(self.joints.clone(), &edges, &interps)
    }

    pub fn root_index(&self) -> Result<usize> {
        match &self.root {
            Some(r) => self.joint(r),
            None => Ok(self.joints.iter().position(|j| j == "neck").unwrap_or(0)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_builds() {
        let spec = GraphSpec::skeleton14();
        let g = spec.build().unwrap();
        assert_eq!(g.len(), 14);
        assert_eq!(g.name(spec.root_index().unwrap()), "neck");
        let back = GraphSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn json_with_interpolation() {
        let text = r#"{"joints":["a","b","c"],"edges":[["a","b"],["b","c"]],
            "interpolate":[{"a":"a","b":"b","count":1,"fractions":[0.25]}]}"#;
        let g = GraphSpec::from_json(text).unwrap().build().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.name(3), "a~b/1");
    }

    #[test]
    fn unknown_joint_is_an_error() {
        let text = r#"{"joints":["a"],"edges":[["a","zz"]]}"#;
        assert!(GraphSpec::from_json(text).unwrap().build().is_err());
    }
}

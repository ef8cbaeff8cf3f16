use std::collections::BTreeMap;

use super::eval::{apply_binary, apply_func};
use super::{BinOp, EvalError, Expr, Func};
use crate::error::Result;
use crate::model::{BlochVector, TwoBandSpec};

/// Four component expressions and their parameter table.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDefinition {
    pub d0: Expr,
    pub d1: Expr,
    pub d2: Expr,
    pub d3: Expr,
    pub params: BTreeMap<String, f64>,
}

impl ModelDefinition {
    pub fn new(exprs: [Expr; 4], params: BTreeMap<String, f64>) -> Self {
        let [d0, d1, d2, d3] = exprs;
        Self {
            d0,
            d1,
            d2,
            d3,
            params,
        }
    }

    pub fn exprs(&self) -> [&Expr; 4] {
        [&self.d0, &self.d1, &self.d2, &self.d3]
    }

    /// Checks every symbol is `k` or a declared parameter.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.params.contains_key("k") {
            return Err(EvalError::Domain("`k` is reserved for the momentum".into()));
        }
        for e in self.exprs() {
            for s in e.symbols() {
                if s != "k" && !self.params.contains_key(s) {
                    return Err(EvalError::UnboundSymbol(s.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Expression tree with symbols resolved to slots: 0 is `k`, `n + 1` is
/// the n-th parameter in name order.
#[derive(Clone, Debug)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn resolve(e: &Expr, names: &[String]) -> Result<Node, EvalError> {
        Ok(match e {
            Expr::Num(v) => Node::Num(*v),
            Expr::Sym(s) if s == "k" => Node::Slot(0),
            Expr::Sym(s) => {
                let i = names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?;
                Node::Slot(i + 1)
            }
            Expr::Neg(a) => Node::Neg(Box::new(Node::resolve(a, names)?)),
            Expr::Binary(op, a, b) => Node::Binary(
                *op,
                Box::new(Node::resolve(a, names)?),
                Box::new(Node::resolve(b, names)?),
            ),
            Expr::Call(f, a) => Node::Call(*f, Box::new(Node::resolve(a, names)?)),
        })
    }

    fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        match self {
            Node::Num(v) => Ok(*v),
            Node::Slot(i) => Ok(slots[*i]),
            Node::Neg(a) => Ok(-a.eval(slots)?),
            Node::Binary(op, a, b) => apply_binary(*op, a.eval(slots)?, b.eval(slots)?),
            Node::Call(f, a) => apply_func(*f, a.eval(slots)?),
        }
    }
}

/// A validated model ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    def: ModelDefinition,
    nodes: [Node; 4],
    values: Vec<f64>,
}

impl CompiledModel {
    fn new(def: ModelDefinition) -> Result<Self, EvalError> {
        def.validate()?;
        let names: Vec<String> = def.params.keys().cloned().collect();
        let [a, b, c, d] = def.exprs();
        let nodes = [
            Node::resolve(a, &names)?,
            Node::resolve(b, &names)?,
            Node::resolve(c, &names)?,
            Node::resolve(d, &names)?,
        ];
        let values = def.params.values().copied().collect();
        Ok(Self { def, nodes, values })
    }

    fn slots(&self, k: f64) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.values.len() + 1);
        s.push(k);
        s.extend_from_slice(&self.values);
        s
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.def.params
    }

    pub fn definition(&self) -> &ModelDefinition {
        &self.def
    }

    pub fn d0(&self, k: f64) -> Result<f64> {
        Ok(self.nodes[0].eval(&self.slots(k))?)
    }

    pub fn d(&self, k: f64) -> Result<BlochVector> {
        let s = self.slots(k);
        Ok(BlochVector::new(
            self.nodes[1].eval(&s)?,
            self.nodes[2].eval(&s)?,
            self.nodes[3].eval(&s)?,
        ))
    }

    pub fn with_param(&self, name: &str, value: f64) -> Result<CompiledModel> {
        if !self.def.params.contains_key(name) {
            return Err(EvalError::UnboundSymbol(name.to_string()).into());
        }
        let mut def = self.def.clone();
        def.params.insert(name.to_string(), value);
        Ok(CompiledModel::new(def)?)
    }
}

pub fn compile_model(def: ModelDefinition) -> Result<TwoBandSpec> {
    Ok(TwoBandSpec::from_compiled(CompiledModel::new(def)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{evaluate_expr, parse_expression};
    use crate::error::Error;
    use crate::model::{evaluate_mode, tfim_spec};
    use std::f64::consts::PI;

    fn def(src: [&str; 4], params: &[(&str, f64)]) -> ModelDefinition {
        ModelDefinition::new(
            src.map(|s| parse_expression(s).unwrap()),
            params.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        )
    }

    fn tfim_text(g: f64) -> ModelDefinition {
        def(["0", "0", "2*sin(k)", "2*(g-cos(k))"], &[("g", g)])
    }

    #[test]
    fn tfim_text_matches_closed_form() {
        let spec = compile_model(tfim_text(1.3)).unwrap();
        let a = spec.d(PI / 2.0).unwrap();
        let b = tfim_spec(1.3).d(PI / 2.0).unwrap();
        for (x, y) in a.components().iter().zip(b.components()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn constant_model_has_unit_band() {
        let spec = compile_model(def(["0", "0", "0", "1"], &[])).unwrap();
        for k in [0.1, 1.0, 3.0] {
            assert_eq!(evaluate_mode(&spec, k).unwrap().eps, 1.0);
        }
    }

    #[test]
    fn undeclared_symbol_rejected() {
        let r = compile_model(def(["0", "0", "2*sin(k)", "2*(h-cos(k))"], &[("g", 1.0)]));
        assert!(matches!(r, Err(Error::Eval(EvalError::UnboundSymbol(s))) if s == "h"));
    }

    #[test]
    fn compiled_is_bit_identical_to_tree_walk() {
        let d = def(
            ["g^2", "sin(k)/(1+g)", "sqrt(abs(g-k))*exp(-k)", "ln(2+cos(k))-h"],
            &[("g", 0.7), ("h", -1.25)],
        );
        let spec = compile_model(d.clone()).unwrap();
        for n in 0..50 {
            let k = 0.05 + n as f64 * 0.06;
            let v = spec.d(k).unwrap();
            assert_eq!(spec.d0(k).unwrap().to_bits(), evaluate_expr(&d.d0, k, &d.params).unwrap().to_bits());
            assert_eq!(v.d1.to_bits(), evaluate_expr(&d.d1, k, &d.params).unwrap().to_bits());
            assert_eq!(v.d2.to_bits(), evaluate_expr(&d.d2, k, &d.params).unwrap().to_bits());
            assert_eq!(v.d3.to_bits(), evaluate_expr(&d.d3, k, &d.params).unwrap().to_bits());
        }
    }

    #[test]
    fn with_param_rebinds() {
        let spec = compile_model(tfim_text(0.2)).unwrap().with_param("g", 1.3).unwrap();
        assert_eq!(spec.params()["g"], 1.3);
        assert!(compile_model(tfim_text(0.2)).unwrap().with_param("q", 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn text_tfim_agrees_with_closed_form(g in -3.0f64..3.0, k in 1e-3f64..(PI - 1e-3)) {
                let a = evaluate_mode(&compile_model(tfim_text(g)).unwrap(), k);
                let b = evaluate_mode(&tfim_spec(g), k);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        prop_assert!((a.eps - b.eps).abs() <= 1e-15);
                        for (x, y) in a.d.components().iter().zip(b.d.components()) {
                            prop_assert!((x - y).abs() <= 1e-15);
                        }
                        for (x, y) in a.unit_d.components().iter().zip(b.unit_d.components()) {
                            prop_assert!((x - y).abs() <= 1e-15);
                        }
                    }
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "one side errored"),
                }
            }
        }
    }
}

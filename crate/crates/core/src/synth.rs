//! Random programs and trees for property tests and benchmarks.
//!
//! The mini-C generator records the significant token sequence it writes,
//! independently of the lexer, so tests can check reconstruction against it.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frontend::{Ast, AstNode, AstNodeKind, Language};
use crate::rules::CompressRuleset;

/// Library routines generated code may call; never defined in a corpus.
pub const EXTERNAL_CALLS: &[&str] = &["memcpy", "strlen", "printf", "malloc", "free"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRoutine {
    pub name: String,
    pub source: String,
    /// Significant tokens in source order (punctuation excluded).
    pub tokens: Vec<String>,
    /// Names called, in order of appearance.
    pub calls: Vec<String>,
}

#[derive(Default)]
struct Emitter {
    src: String,
    tokens: Vec<String>,
    calls: Vec<String>,
}

impl Emitter {
    fn tok(&mut self, t: &str) {
        self.src.push_str(t);
        self.src.push(' ');
        self.tokens.push(t.to_string());
    }

    fn punct(&mut self, p: &str) {
        self.src.push_str(p);
        self.src.push(' ');
    }

    fn nl(&mut self) {
        self.src.push('\n');
    }
}

/// Knobs for [`RoutineGen`].
#[derive(Debug, Clone)]
pub struct GenOptions {
    pub max_statements: usize,
    pub max_nesting: usize,
    pub max_expr_depth: usize,
    /// Chance that an expression or statement is a call.
    pub call_rate: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_statements: 6,
            max_nesting: 2,
            max_expr_depth: 2,
            call_rate: 0.2,
        }
    }
}

/// Generator of one routine at a time.
pub struct RoutineGen<'a> {
    rng: &'a mut ChaCha8Rng,
    opts: &'a GenOptions,
    callees: &'a [String],
    vars: Vec<String>,
    next_var: usize,
    out: Emitter,
}

const RETURN_TYPES: &[&str] = &["int", "static int", "long", "unsigned long", "void", "static void"];
const PARAM_TYPES: &[&[&str]] = &[&["int"], &["long"], &["char", "*"], &["unsigned int"]];
const BINARY_OPS: &[&str] = &["+", "-", "*", "&", "|", "^", "<<"];
const COMPARE_OPS: &[&str] = &["<", ">", "==", "!=", "<=", ">="];

impl<'a> RoutineGen<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, opts: &'a GenOptions, callees: &'a [String]) -> Self {
        RoutineGen {
            rng,
            opts,
            callees,
            vars: Vec::new(),
            next_var: 0,
            out: Emitter::default(),
        }
    }

    fn callee(&mut self) -> String {
        if !self.callees.is_empty() && self.rng.random_bool(0.7) {
            self.callees.choose(self.rng).expect("non-empty").clone()
        } else {
            EXTERNAL_CALLS.choose(self.rng).expect("non-empty").to_string()
        }
    }

    fn var(&mut self) -> String {
        self.vars.choose(self.rng).expect("at least one variable").clone()
    }

    fn call(&mut self, name: &str, depth: usize) {
        self.out.tok(name);
        self.out.calls.push(name.to_string());
        self.out.punct("(");
        let args = self.rng.random_range(0..=2);
        for a in 0..args {
            if a > 0 {
                self.out.punct(",");
            }
            self.expr(depth + 1);
        }
        self.out.punct(")");
    }

    fn expr(&mut self, depth: usize) {
        let leaf = depth >= self.opts.max_expr_depth;
        let r: f64 = self.rng.random();
        if !leaf && r < self.opts.call_rate {
            let name = self.callee();
            self.call(&name, depth);
        } else if !leaf && r < 0.55 {
            self.expr(depth + 1);
            let op = *BINARY_OPS.choose(self.rng).expect("non-empty");
            self.out.tok(op);
            self.expr(depth + 1);
        } else if !leaf && r < 0.6 {
            self.out.punct("(");
            self.expr(depth + 1);
            self.out.punct(")");
        } else if r < 0.8 {
            let v = self.var();
            self.out.tok(&v);
        } else {
            let n = self.rng.random_range(0..100).to_string();
            self.out.tok(&n);
        }
    }

    fn condition(&mut self) {
        self.expr(1);
        let op = *COMPARE_OPS.choose(self.rng).expect("non-empty");
        self.out.tok(op);
        self.expr(1);
    }

    fn fresh_var(&mut self) -> String {
        let v = format!("v{}", self.next_var);
        self.next_var += 1;
        v
    }

    fn block(&mut self, nesting: usize) {
        self.out.punct("{");
        self.out.nl();
        let n = self.rng.random_range(1..=self.opts.max_statements.clamp(1, 3));
        let saved = self.vars.len();
        for _ in 0..n {
            self.statement(nesting);
        }
        self.vars.truncate(saved);
        self.out.punct("}");
        self.out.nl();
    }

    /// A forced call statement: `name(vars...);`.
    pub fn call_statement(&mut self, name: &str, args: usize) {
        self.out.tok(name);
        self.out.calls.push(name.to_string());
        self.out.punct("(");
        for a in 0..args {
            if a > 0 {
                self.out.punct(",");
            }
            let v = self.var();
            self.out.tok(&v);
        }
        self.out.punct(")");
        self.out.punct(";");
        self.out.nl();
    }

    fn statement(&mut self, nesting: usize) {
        let nested = nesting < self.opts.max_nesting;
        let r: f64 = self.rng.random();
        if r < 0.2 {
            let v = self.fresh_var();
            self.out.tok("int");
            self.out.tok(&v);
            self.out.tok("=");
            self.expr(1);
            self.out.punct(";");
            self.vars.push(v);
        } else if r < 0.4 {
            let v = self.var();
            self.out.tok(&v);
            self.out.tok(if self.rng.random_bool(0.7) { "=" } else { "+=" });
            self.expr(1);
            self.out.punct(";");
        } else if r < 0.4 + self.opts.call_rate {
            let name = self.callee();
            self.call(&name, 1);
            self.out.punct(";");
        } else if nested && r < 0.75 {
            self.out.tok("if");
            self.out.punct("(");
            self.condition();
            self.out.punct(")");
            self.block(nesting + 1);
            if self.rng.random_bool(0.4) {
                self.out.tok("else");
                self.block(nesting + 1);
            }
        } else if nested && r < 0.85 {
            self.out.tok("while");
            self.out.punct("(");
            self.condition();
            self.out.punct(")");
            self.block(nesting + 1);
        } else if nested {
            let v = self.var();
            self.out.tok("for");
            self.out.punct("(");
            self.out.tok(&v);
            self.out.tok("=");
            self.out.tok("0");
            self.out.punct(";");
            self.out.tok(&v);
            self.out.tok("<");
            self.expr(1);
            self.out.punct(";");
            self.out.tok(&v);
            self.out.tok("++");
            self.out.punct(")");
            self.block(nesting + 1);
        } else {
            let v = self.var();
            self.out.tok(&v);
            self.out.tok("=");
            self.expr(1);
            self.out.punct(";");
        }
        self.out.nl();
    }

    /// Write a full routine. `forced` calls are placed at random points of
    /// the top-level body.
    pub fn routine(mut self, name: &str, forced: &[(String, usize)]) -> SynthRoutine {
        let ret = *RETURN_TYPES.choose(self.rng).expect("non-empty");
        self.out.tok(ret);
        self.out.tok(name);
        self.out.punct("(");
        let params = self.rng.random_range(1..=3);
        for p in 0..params {
            if p > 0 {
                self.out.punct(",");
            }
            for t in *PARAM_TYPES.choose(self.rng).expect("non-empty") {
                self.out.tok(t);
            }
            let v = format!("p{p}");
            self.out.tok(&v);
            self.vars.push(v);
        }
        self.out.punct(")");
        self.out.punct("{");
        self.out.nl();
        let n = self.rng.random_range(1..=self.opts.max_statements.max(1));
        let mut slots: Vec<usize> = (0..forced.len()).map(|_| self.rng.random_range(0..=n)).collect();
        slots.sort_unstable();
        let mut f = 0;
        for i in 0..=n {
            while f < forced.len() && slots[f] == i {
                let (callee, args) = &forced[f];
                self.call_statement(callee, *args);
                f += 1;
            }
            if i < n {
                self.statement(0);
            }
        }
        if !ret.ends_with("void") {
            self.out.tok("return");
            self.expr(1);
            self.out.punct(";");
            self.out.nl();
        }
        self.out.punct("}");
        self.out.nl();
        SynthRoutine {
            name: name.to_string(),
            source: self.out.src,
            tokens: self.out.tokens,
            calls: self.out.calls,
        }
    }
}

/// `n` routines where routine `i` may call routines `0..i` and library names.
pub fn random_corpus(seed: u64, n: usize, opts: &GenOptions) -> Vec<SynthRoutine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<String> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("fn_{i}");
        let r = RoutineGen::new(&mut rng, opts, &names).routine(&name, &[]);
        out.push(r);
        names.push(name);
    }
    out
}

/// Concatenate routine sources into one translation unit.
pub fn program_source(routines: &[SynthRoutine]) -> String {
    routines.iter().map(|r| r.source.as_str()).collect::<Vec<_>>().join("\n")
}

/// A labelled program: vulnerable routines call [`SINK`], the others call
/// [`SAFE`]; both helpers are defined in the source and left unlabelled.
#[derive(Debug, Clone)]
pub struct SinkDataset {
    pub source: String,
    pub labels: Vec<(String, bool)>,
}

pub const SINK: &str = "copy_unchecked";
pub const SAFE: &str = "copy_bounded";

pub fn sink_dataset(seed: u64, n: usize) -> SinkDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GenOptions {
        max_statements: 4,
        call_rate: 0.1,
        ..Default::default()
    };
    let mut source = format!(
        "static void {SINK}(char *dst, char *src) {{\n  char tmp[16];\n  strcpy(tmp, src);\n  strcpy(dst, tmp);\n}}\n\n\
         static void {SAFE}(char *dst, char *src, int n) {{\n  if (n > 0) {{\n    strncpy(dst, src, n - 1);\n    dst[n - 1] = 0;\n  }}\n}}\n\n"
    );
    let mut flags: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    flags.shuffle(&mut rng);
    let mut labels = Vec::with_capacity(n);
    for (i, &vulnerable) in flags.iter().enumerate() {
        let name = format!("handler_{i}");
        let forced = if vulnerable {
            vec![(SINK.to_string(), 2)]
        } else {
            vec![(SAFE.to_string(), 3)]
        };
        let r = RoutineGen::new(&mut rng, &opts, &[]).routine(&name, &forced);
        source.push_str(&r.source);
        source.push('\n');
        labels.push((name, vulnerable));
    }
    SinkDataset { source, labels }
}

/// A random well-formed AST of roughly `size` nodes whose property labels
/// are drawn from `rules`.
pub fn random_ast(rng: &mut ChaCha8Rng, name: &str, size: usize, rules: &CompressRuleset, language: Language) -> Ast {
    const TOKENS: &[&str] = &["a", "b", "x", "0", "1", "+", "=", "int", "p"];
    let labels: Vec<&str> = rules.names().map(|r| r.name.as_str()).collect();
    let mut nodes = vec![AstNode {
        id: 0,
        kind: AstNodeKind::Property,
        label: "FunctionDefinition".into(),
        children: Vec::new(),
        span: None,
    }];
    let mut open = vec![0u32];
    let target = size.max(2);
    while nodes.len() < target {
        let parent = *open.choose(rng).expect("root stays open");
        let id = nodes.len() as u32;
        let remaining = target - nodes.len();
        let make_prop = remaining > 1 && rng.random_bool(0.45);
        nodes.push(if make_prop {
            AstNode {
                id,
                kind: AstNodeKind::Property,
                label: labels.choose(rng).expect("ruleset has names").to_string(),
                children: Vec::new(),
                span: None,
            }
        } else {
            AstNode {
                id,
                kind: AstNodeKind::Token,
                label: TOKENS.choose(rng).expect("non-empty").to_string(),
                children: Vec::new(),
                span: None,
            }
        });
        nodes[parent as usize].children.push(id);
        if make_prop {
            open.push(id);
        }
    }
    // Leaf properties get a token so every property has a child.
    let childless: Vec<u32> = nodes
        .iter()
        .filter(|n| n.kind == AstNodeKind::Property && n.children.is_empty())
        .map(|n| n.id)
        .collect();
    for p in childless {
        let id = nodes.len() as u32;
        nodes.push(AstNode {
            id,
            kind: AstNodeKind::Token,
            label: TOKENS.choose(rng).expect("non-empty").to_string(),
            children: Vec::new(),
            span: None,
        });
        nodes[p as usize].children.push(id);
    }
    Ast::new(nodes, 0, name.to_string(), language)
}

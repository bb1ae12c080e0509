//! Recursive-descent parser for a mini-C subset.
//!
//! The tree shape follows the Eclipse CDT naming scheme: every terminal is a
//! significant lexeme, punctuation is dropped, and each construct gets the
//! property label a CDT AST would give it (`FunctionCallExpression`,
//! `IdExpression`/`Name`, `Declarator`/`Pointer`, ...).

use super::lexer::{self, LexKind, Lexeme, BASE_TYPE_KEYWORDS};
use super::{Ast, AstNode, AstNodeKind, FrontendError, Language};
use crate::rules::CompressRuleset;

type Result<T> = std::result::Result<T, FrontendError>;

/// Parse every function definition in `source`, checking labels against the
/// built-in C vocabulary.
pub fn parse_mini_c(source: &str) -> Result<Vec<Ast>> {
    parse_mini_c_with_vocabulary(source, CompressRuleset::builtin_c())
}

/// Parse with an explicit vocabulary; any property label outside it is an
/// error.
pub fn parse_mini_c_with_vocabulary(source: &str, vocab: &CompressRuleset) -> Result<Vec<Ast>> {
    let lexemes = lexer::lex(source)?;
    let mut parser = Parser {
        lx: &lexemes,
        pos: 0,
    };
    let mut out = Vec::new();
    while !parser.at_end() {
        if let Some(ast) = parser.top_level()? {
            for node in &ast.nodes {
                if node.kind == AstNodeKind::Property && !vocab.contains(&node.label) {
                    return Err(FrontendError::UnknownLabel {
                        label: node.label.clone(),
                    });
                }
            }
            out.push(ast);
        }
    }
    Ok(out)
}

/// Nodes under construction; ids are provisional until `finish`.
#[derive(Default)]
struct Builder {
    nodes: Vec<AstNode>,
}

impl Builder {
    fn token(&mut self, lx: &Lexeme) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(AstNode {
            id,
            kind: AstNodeKind::Token,
            label: lx.text.clone(),
            children: Vec::new(),
            span: Some((lx.line, lx.col)),
        });
        id
    }

    fn prop(&mut self, label: &str, children: Vec<u32>) -> u32 {
        let id = self.nodes.len() as u32;
        let span = children.first().and_then(|&c| self.nodes[c as usize].span);
        self.nodes.push(AstNode {
            id,
            kind: AstNodeKind::Property,
            label: label.to_string(),
            children,
            span,
        });
        id
    }

    fn push_child(&mut self, parent: u32, child: u32) {
        self.nodes[parent as usize].children.push(child);
    }

    /// Renumber in preorder so the root gets id 0 and ids are dense.
    fn finish(self, root: u32, name: String) -> Ast {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(self.nodes[id as usize].children.iter().rev());
        }
        let mut new_id = vec![u32::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_id[old as usize] = new as u32;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old as usize];
                AstNode {
                    id: new_id[old as usize],
                    kind: n.kind,
                    label: n.label.clone(),
                    children: n.children.iter().map(|c| new_id[*c as usize]).collect(),
                    span: n.span,
                }
            })
            .collect();
        Ast::new(nodes, 0, name, Language::C)
    }
}

struct Declarator {
    node: u32,
    name: Option<String>,
    is_function: bool,
}

struct Parser<'a> {
    lx: &'a [Lexeme],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.lx.len()
    }

    fn peek(&self) -> Option<&'a Lexeme> {
        self.lx.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Lexeme> {
        self.lx.get(self.pos + offset)
    }

    fn check(&self, text: &str) -> bool {
        self.peek().is_some_and(|l| l.is(text))
    }

    fn check_at(&self, offset: usize, text: &str) -> bool {
        self.peek_at(offset).is_some_and(|l| l.is(text))
    }

    fn check_kind(&self, kind: LexKind) -> bool {
        self.peek().is_some_and(|l| l.kind == kind)
    }

    fn bump(&mut self) -> Result<&'a Lexeme> {
        let lx = self.peek().ok_or_else(|| self.error("unexpected end of input"))?;
        self.pos += 1;
        Ok(lx)
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.check(text) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, text: &str) -> Result<()> {
        if self.eat(text) {
            Ok(())
        } else {
            let found = self.peek().map(|l| l.text.as_str()).unwrap_or("end of input");
            Err(self.error(&format!("expected `{text}`, found `{found}`")))
        }
    }

    fn position(&self) -> (u32, u32) {
        match self.peek().or_else(|| self.lx.last()) {
            Some(l) => (l.line, l.col),
            None => (1, 1),
        }
    }

    fn error(&self, message: &str) -> FrontendError {
        let (line, col) = self.position();
        FrontendError::Syntax {
            line,
            col,
            message: message.to_string(),
        }
    }

    fn unsupported(&self, construct: &str) -> FrontendError {
        let (line, col) = self.position();
        FrontendError::Unsupported {
            construct: construct.to_string(),
            line,
            col,
        }
    }

    /// Skip a brace-balanced declaration up to and including its `;`.
    fn skip_declaration(&mut self) -> Result<()> {
        let mut depth = 0usize;
        loop {
            let lx = self.bump()?;
            match lx.text.as_str() {
                "{" | "(" | "[" if lx.kind == LexKind::Punct => depth += 1,
                "}" | ")" | "]" if lx.kind == LexKind::Punct => depth = depth.saturating_sub(1),
                ";" if lx.kind == LexKind::Punct && depth == 0 => return Ok(()),
                _ => {}
            }
        }
    }

    /// One external declaration. Function definitions yield an AST;
    /// prototypes, globals, typedefs and tag definitions are skipped.
    fn top_level(&mut self) -> Result<Option<Ast>> {
        if self.eat(";") {
            return Ok(None);
        }
        let first = self.peek().expect("checked by caller");
        if first.is("typedef") {
            self.skip_declaration()?;
            return Ok(None);
        }
        if first.kind == LexKind::Specifier && lexer::ends_with_tag_keyword(&first.text) {
            let tag_body = self.check_at(1, "{")
                || (self.peek_at(1).is_some_and(|l| l.kind == LexKind::Ident) && self.check_at(2, "{"));
            if tag_body {
                self.skip_declaration()?;
                return Ok(None);
            }
        }
        if first.kind == LexKind::Ident && self.check_at(1, "(") {
            return Err(self.unsupported("function definition without a return type"));
        }
        if !matches!(first.kind, LexKind::Specifier | LexKind::Ident) {
            return Err(self.error(&format!("expected a function definition, found `{}`", first.text)));
        }

        let start = self.pos;
        let mut b = Builder::default();
        let spec = self.decl_specifiers(&mut b, true)?;
        let decl = self
            .declarator(&mut b, false)?
            .ok_or_else(|| self.error("expected a declarator"))?;
        if self.check("{") && decl.is_function {
            let body = self.compound(&mut b)?;
            let root = b.prop("FunctionDefinition", vec![spec, decl.node, body]);
            let name = decl.name.ok_or_else(|| self.error("function definition without a name"))?;
            return Ok(Some(b.finish(root, name)));
        }
        if self.check("{") {
            return Err(self.error("block after a non-function declarator"));
        }
        self.pos = start;
        self.skip_declaration()?;
        Ok(None)
    }

    /// Declaration specifiers. `type_name_allowed` means a leading identifier
    /// may be taken as a typedef name.
    fn decl_specifiers(&mut self, b: &mut Builder, type_name_allowed: bool) -> Result<u32> {
        let lx = self.peek().ok_or_else(|| self.error("expected declaration specifiers"))?;
        if lx.kind == LexKind::Specifier {
            self.pos += 1;
            let run = b.token(lx);
            if lexer::ends_with_tag_keyword(&lx.text) {
                if self.check("{") {
                    return Err(self.unsupported("tag definition"));
                }
                let tag = self.bump()?;
                if tag.kind != LexKind::Ident {
                    return Err(self.error("expected a tag name"));
                }
                if self.check("{") {
                    return Err(self.unsupported("tag definition"));
                }
                let tag_tok = b.token(tag);
                let name = b.prop("Name", vec![tag_tok]);
                let mut children = vec![run, name];
                self.trailing_qualifiers(b, &mut children);
                return Ok(b.prop("ElaboratedTypeSpecifier", children));
            }
            let has_base = lx.text.split(' ').any(|w| BASE_TYPE_KEYWORDS.contains(&w));
            if !has_base && self.check_kind(LexKind::Ident) && self.ident_is_type_name() {
                let ident = self.bump()?;
                let tok = b.token(ident);
                let name = b.prop("Name", vec![tok]);
                let mut children = vec![run, name];
                self.trailing_qualifiers(b, &mut children);
                return Ok(b.prop("NamedTypeSpecifier", children));
            }
            return Ok(b.prop("SimpleDeclSpecifier", vec![run]));
        }
        if lx.kind == LexKind::Ident && type_name_allowed {
            self.pos += 1;
            let tok = b.token(lx);
            let name = b.prop("Name", vec![tok]);
            let mut children = vec![name];
            self.trailing_qualifiers(b, &mut children);
            return Ok(b.prop("NamedTypeSpecifier", children));
        }
        Err(self.error(&format!("expected declaration specifiers, found `{}`", lx.text)))
    }

    fn trailing_qualifiers(&mut self, b: &mut Builder, children: &mut Vec<u32>) {
        if let Some(lx) = self.peek() {
            if lx.kind == LexKind::Specifier && !lx.text.split(' ').any(|w| BASE_TYPE_KEYWORDS.contains(&w)) {
                self.pos += 1;
                children.push(b.token(lx));
            }
        }
    }

    /// After a qualifier-only specifier run, an identifier is a type name
    /// when something declarator-like follows it.
    fn ident_is_type_name(&self) -> bool {
        match self.peek_at(1) {
            Some(l) => l.kind == LexKind::Ident || l.is("*") || l.is("(") || l.is(",") || l.is(")"),
            None => false,
        }
    }

    fn declarator(&mut self, b: &mut Builder, abstract_ok: bool) -> Result<Option<Declarator>> {
        let mut children = Vec::new();
        while self.check("*") {
            let star = self.bump()?;
            let mut pc = vec![b.token(star)];
            if let Some(q) = self.peek() {
                if q.kind == LexKind::Specifier {
                    self.pos += 1;
                    pc.push(b.token(q));
                }
            }
            children.push(b.prop("Pointer", pc));
        }

        let mut name = None;
        if let Some(lx) = self.peek() {
            if lx.kind == LexKind::Ident {
                self.pos += 1;
                let tok = b.token(lx);
                children.push(b.prop("Name", vec![tok]));
                name = Some(lx.text.clone());
            } else if lx.is("(") && self.check_at(1, "*") {
                self.pos += 1;
                let inner = self
                    .declarator(b, abstract_ok)?
                    .ok_or_else(|| self.error("expected a nested declarator"))?;
                self.expect(")")?;
                children.push(inner.node);
                name = inner.name;
            }
        }
        if name.is_none() && !abstract_ok {
            return Err(self.error("expected an identifier"));
        }

        let (mut is_function, mut is_array) = (false, false);
        loop {
            if self.eat("[") {
                is_array = true;
                let mut mc = Vec::new();
                if !self.check("]") {
                    mc.push(self.expression(b)?);
                }
                self.expect("]")?;
                children.push(b.prop("ArrayModifier", mc));
            } else if self.check("(") {
                self.pos += 1;
                is_function = true;
                self.parameters(b, &mut children)?;
            } else {
                break;
            }
        }

        if children.is_empty() {
            return Ok(None);
        }
        let label = if is_function {
            "FunctionDeclarator"
        } else if is_array {
            "ArrayDeclarator"
        } else {
            "Declarator"
        };
        Ok(Some(Declarator {
            node: b.prop(label, children),
            name,
            is_function,
        }))
    }

    /// Parameter list after `(`, consuming the closing `)`.
    fn parameters(&mut self, b: &mut Builder, out: &mut Vec<u32>) -> Result<()> {
        if self.eat(")") {
            return Ok(());
        }
        loop {
            if self.check("...") {
                let lx = self.bump()?;
                out.push(b.token(lx));
            } else {
                let spec = self.decl_specifiers(b, true)?;
                let mut pc = vec![spec];
                if let Some(d) = self.declarator(b, true)? {
                    pc.push(d.node);
                }
                out.push(b.prop("ParameterDeclaration", pc));
            }
            if self.eat(")") {
                return Ok(());
            }
            self.expect(",")?;
        }
    }

    fn compound(&mut self, b: &mut Builder) -> Result<u32> {
        self.expect("{")?;
        let mut children = Vec::new();
        while !self.eat("}") {
            if self.at_end() {
                return Err(self.error("unterminated block"));
            }
            children.push(self.statement(b)?);
        }
        Ok(b.prop("CompoundStatement", children))
    }

    /// Whether the statement at the cursor is a declaration.
    fn is_declaration_start(&self) -> bool {
        let Some(first) = self.peek() else { return false };
        match first.kind {
            LexKind::Specifier => true,
            LexKind::Ident => {
                let Some(second) = self.peek_at(1) else { return false };
                if second.kind == LexKind::Ident {
                    return true;
                }
                if !second.is("*") {
                    return false;
                }
                let mut k = 1;
                while self.check_at(k, "*") {
                    k += 1;
                }
                let named = self.peek_at(k).is_some_and(|l| l.kind == LexKind::Ident);
                let follow = self.peek_at(k + 1);
                named && follow.is_some_and(|l| l.is(";") || l.is("=") || l.is(",") || l.is("["))
            }
            _ => false,
        }
    }

    fn declaration(&mut self, b: &mut Builder) -> Result<u32> {
        let spec = self.decl_specifiers(b, true)?;
        let mut children = vec![spec];
        if !self.check(";") {
            loop {
                let d = self
                    .declarator(b, false)?
                    .ok_or_else(|| self.error("expected a declarator"))?;
                if self.check("=") {
                    let eq = self.bump()?;
                    let eq_tok = b.token(eq);
                    let init = self.initializer(b)?;
                    let node = b.prop("EqualsInitializer", vec![eq_tok, init]);
                    b.push_child(d.node, node);
                }
                children.push(d.node);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect(";")?;
        let simple = b.prop("SimpleDeclaration", children);
        Ok(b.prop("DeclarationStatement", vec![simple]))
    }

    fn initializer(&mut self, b: &mut Builder) -> Result<u32> {
        if !self.eat("{") {
            return self.assignment(b);
        }
        let mut items = Vec::new();
        while !self.eat("}") {
            if self.check(".") || self.check("[") {
                return Err(self.unsupported("designated initializer"));
            }
            items.push(self.initializer(b)?);
            if !self.eat(",") {
                self.expect("}")?;
                break;
            }
        }
        Ok(b.prop("InitializerList", items))
    }

    fn statement(&mut self, b: &mut Builder) -> Result<u32> {
        let lx = self.peek().ok_or_else(|| self.error("expected a statement"))?;
        if lx.is("{") {
            return self.compound(b);
        }
        if lx.is(";") {
            self.pos += 1;
            return Ok(b.prop("NullStatement", vec![]));
        }
        if lx.kind == LexKind::Keyword {
            return self.keyword_statement(b, lx);
        }
        if lx.kind == LexKind::Ident && self.check_at(1, ":") {
            self.pos += 2;
            let tok = b.token(lx);
            let name = b.prop("Name", vec![tok]);
            let body = self.statement(b)?;
            return Ok(b.prop("LabelStatement", vec![name, body]));
        }
        if lx.kind == LexKind::Specifier && lexer::ends_with_tag_keyword(&lx.text) {
            let body_follows = self.check_at(1, "{")
                || (self.peek_at(1).is_some_and(|l| l.kind == LexKind::Ident) && self.check_at(2, "{"));
            if body_follows {
                return Err(self.unsupported("tag definition"));
            }
        }
        if self.is_declaration_start() {
            return self.declaration(b);
        }
        let e = self.expression(b)?;
        self.expect(";")?;
        Ok(b.prop("ExpressionStatement", vec![e]))
    }

    fn keyword_statement(&mut self, b: &mut Builder, kw: &'a Lexeme) -> Result<u32> {
        match kw.text.as_str() {
            "if" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                c.push(self.paren_expression(b)?);
                c.push(self.statement(b)?);
                if self.check("else") {
                    let e = self.bump()?;
                    c.push(b.token(e));
                    c.push(self.statement(b)?);
                }
                Ok(b.prop("IfStatement", c))
            }
            "while" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                c.push(self.paren_expression(b)?);
                c.push(self.statement(b)?);
                Ok(b.prop("WhileStatement", c))
            }
            "do" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                c.push(self.statement(b)?);
                if !self.check("while") {
                    return Err(self.error("expected `while` after `do` body"));
                }
                let w = self.bump()?;
                c.push(b.token(w));
                c.push(self.paren_expression(b)?);
                self.expect(";")?;
                Ok(b.prop("DoStatement", c))
            }
            "for" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                self.expect("(")?;
                if !self.eat(";") {
                    if self.is_declaration_start() {
                        c.push(self.declaration(b)?);
                    } else {
                        let e = self.expression(b)?;
                        self.expect(";")?;
                        c.push(b.prop("ExpressionStatement", vec![e]));
                    }
                }
                if !self.check(";") {
                    c.push(self.expression(b)?);
                }
                self.expect(";")?;
                if !self.check(")") {
                    c.push(self.expression(b)?);
                }
                self.expect(")")?;
                c.push(self.statement(b)?);
                Ok(b.prop("ForStatement", c))
            }
            "switch" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                c.push(self.paren_expression(b)?);
                c.push(self.statement(b)?);
                Ok(b.prop("SwitchStatement", c))
            }
            "case" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                c.push(self.conditional(b)?);
                self.expect(":")?;
                Ok(b.prop("CaseStatement", c))
            }
            "default" => {
                self.pos += 1;
                let c = vec![b.token(kw)];
                self.expect(":")?;
                Ok(b.prop("DefaultStatement", c))
            }
            "return" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                if !self.check(";") {
                    c.push(self.expression(b)?);
                }
                self.expect(";")?;
                Ok(b.prop("ReturnStatement", c))
            }
            "break" | "continue" => {
                self.pos += 1;
                let c = vec![b.token(kw)];
                self.expect(";")?;
                let label = if kw.text == "break" {
                    "BreakStatement"
                } else {
                    "ContinueStatement"
                };
                Ok(b.prop(label, c))
            }
            "goto" => {
                self.pos += 1;
                let mut c = vec![b.token(kw)];
                let target = self.bump()?;
                if target.kind != LexKind::Ident {
                    return Err(self.unsupported("computed goto"));
                }
                let tok = b.token(target);
                c.push(b.prop("Name", vec![tok]));
                self.expect(";")?;
                Ok(b.prop("GotoStatement", c))
            }
            "sizeof" => {
                let e = self.expression(b)?;
                self.expect(";")?;
                Ok(b.prop("ExpressionStatement", vec![e]))
            }
            "else" => Err(self.error("`else` without `if`")),
            "typedef" => Err(self.unsupported("typedef inside a routine")),
            other => Err(self.unsupported(other)),
        }
    }

    fn paren_expression(&mut self, b: &mut Builder) -> Result<u32> {
        self.expect("(")?;
        let e = self.expression(b)?;
        self.expect(")")?;
        Ok(e)
    }

    fn expression(&mut self, b: &mut Builder) -> Result<u32> {
        let first = self.assignment(b)?;
        if !self.check(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat(",") {
            items.push(self.assignment(b)?);
        }
        Ok(b.prop("ExpressionList", items))
    }

    fn assignment(&mut self, b: &mut Builder) -> Result<u32> {
        const ASSIGN: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "<<=", ">>="];
        let lhs = self.conditional(b)?;
        if let Some(op) = self.peek() {
            if op.kind == LexKind::Operator && ASSIGN.contains(&op.text.as_str()) {
                self.pos += 1;
                let op_tok = b.token(op);
                let rhs = self.assignment(b)?;
                return Ok(b.prop("BinaryExpression", vec![lhs, op_tok, rhs]));
            }
        }
        Ok(lhs)
    }

    fn conditional(&mut self, b: &mut Builder) -> Result<u32> {
        let cond = self.binary(b, 1)?;
        if !self.eat("?") {
            return Ok(cond);
        }
        let then = self.expression(b)?;
        self.expect(":")?;
        let otherwise = self.conditional(b)?;
        Ok(b.prop("ConditionalExpression", vec![cond, then, otherwise]))
    }

    fn binary_precedence(lx: &Lexeme) -> Option<u8> {
        if lx.kind != LexKind::Operator {
            return None;
        }
        Some(match lx.text.as_str() {
            "||" => 1,
            "&&" => 2,
            "|" => 3,
            "^" => 4,
            "&" => 5,
            "==" | "!=" => 6,
            "<" | ">" | "<=" | ">=" => 7,
            "<<" | ">>" => 8,
            "+" | "-" => 9,
            "*" | "/" | "%" => 10,
            _ => return None,
        })
    }

    fn binary(&mut self, b: &mut Builder, min_prec: u8) -> Result<u32> {
        let mut lhs = self.cast(b)?;
        while let Some(op) = self.peek() {
            let Some(prec) = Self::binary_precedence(op) else { break };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let op_tok = b.token(op);
            let rhs = self.binary(b, prec + 1)?;
            lhs = b.prop("BinaryExpression", vec![lhs, op_tok, rhs]);
        }
        Ok(lhs)
    }

    /// Whether `(` at the cursor opens a type name (cast or `sizeof(type)`).
    fn paren_type_ahead(&self, for_cast: bool) -> bool {
        if !self.check("(") {
            return false;
        }
        let Some(first) = self.peek_at(1) else { return false };
        match first.kind {
            LexKind::Specifier => true,
            LexKind::Ident => {
                let mut k = 2;
                let mut stars = 0;
                while self.check_at(k, "*") {
                    k += 1;
                    stars += 1;
                }
                if !self.check_at(k, ")") {
                    return false;
                }
                if stars > 0 {
                    return true;
                }
                for_cast
                    && self.peek_at(k + 1).is_some_and(|l| {
                        matches!(l.kind, LexKind::Ident | LexKind::Number | LexKind::Str | LexKind::Char)
                    })
            }
            _ => false,
        }
    }

    fn type_id(&mut self, b: &mut Builder) -> Result<u32> {
        let spec = self.decl_specifiers(b, true)?;
        let mut c = vec![spec];
        if let Some(d) = self.declarator(b, true)? {
            if d.name.is_some() {
                return Err(self.error("type name must not declare an identifier"));
            }
            c.push(d.node);
        }
        Ok(b.prop("TypeId", c))
    }

    fn cast(&mut self, b: &mut Builder) -> Result<u32> {
        if self.paren_type_ahead(true) {
            self.pos += 1;
            let ty = self.type_id(b)?;
            self.expect(")")?;
            if self.check("{") {
                return Err(self.unsupported("compound literal"));
            }
            let operand = self.cast(b)?;
            return Ok(b.prop("CastExpression", vec![ty, operand]));
        }
        self.unary(b)
    }

    fn unary(&mut self, b: &mut Builder) -> Result<u32> {
        let lx = self.peek().ok_or_else(|| self.error("expected an expression"))?;
        if lx.kind == LexKind::Operator && matches!(lx.text.as_str(), "++" | "--" | "+" | "-" | "!" | "~" | "*" | "&") {
            self.pos += 1;
            let op = b.token(lx);
            let operand = self.cast(b)?;
            return Ok(b.prop("UnaryExpression", vec![op, operand]));
        }
        if lx.is("sizeof") {
            self.pos += 1;
            let kw = b.token(lx);
            if self.paren_type_ahead(false) {
                self.pos += 1;
                let ty = self.type_id(b)?;
                self.expect(")")?;
                return Ok(b.prop("TypeIdExpression", vec![kw, ty]));
            }
            let operand = self.unary(b)?;
            return Ok(b.prop("UnaryExpression", vec![kw, operand]));
        }
        self.postfix(b)
    }

    fn postfix(&mut self, b: &mut Builder) -> Result<u32> {
        let mut e = self.primary(b)?;
        loop {
            if self.eat("[") {
                let idx = self.expression(b)?;
                self.expect("]")?;
                e = b.prop("ArraySubscriptExpression", vec![e, idx]);
            } else if self.eat("(") {
                let mut c = vec![e];
                if !self.eat(")") {
                    loop {
                        c.push(self.assignment(b)?);
                        if self.eat(")") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                e = b.prop("FunctionCallExpression", c);
            } else if self.check(".") || self.check("->") {
                let op = self.bump()?;
                let op_tok = b.token(op);
                let field = self.bump()?;
                if field.kind != LexKind::Ident {
                    return Err(self.error("expected a field name"));
                }
                let tok = b.token(field);
                let name = b.prop("Name", vec![tok]);
                e = b.prop("FieldReference", vec![e, op_tok, name]);
            } else if self.check("++") || self.check("--") {
                let op = self.bump()?;
                let op_tok = b.token(op);
                e = b.prop("UnaryExpression", vec![e, op_tok]);
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self, b: &mut Builder) -> Result<u32> {
        let lx = self.peek().ok_or_else(|| self.error("expected an expression"))?;
        match lx.kind {
            LexKind::Ident => {
                self.pos += 1;
                let tok = b.token(lx);
                let name = b.prop("Name", vec![tok]);
                Ok(b.prop("IdExpression", vec![name]))
            }
            LexKind::Number | LexKind::Char => {
                self.pos += 1;
                let tok = b.token(lx);
                Ok(b.prop("LiteralExpression", vec![tok]))
            }
            LexKind::Str => {
                let mut c = Vec::new();
                while let Some(s) = self.peek().filter(|l| l.kind == LexKind::Str) {
                    self.pos += 1;
                    c.push(b.token(s));
                }
                Ok(b.prop("LiteralExpression", c))
            }
            _ if lx.is("(") => {
                if self.check_at(1, "{") {
                    return Err(self.unsupported("statement expression"));
                }
                self.pos += 1;
                let e = self.expression(b)?;
                self.expect(")")?;
                Ok(e)
            }
            _ => Err(self.error(&format!("expected an expression, found `{}`", lx.text))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ast: &Ast) -> Vec<&str> {
        ast.nodes
            .iter()
            .filter(|n| n.kind == AstNodeKind::Property)
            .map(|n| n.label.as_str())
            .collect()
    }

    #[test]
    fn empty_source_gives_no_routines() {
        assert!(parse_mini_c("").unwrap().is_empty());
        assert!(parse_mini_c("  // nothing\n#include <x.h>\n").unwrap().is_empty());
    }

    #[test]
    fn return_of_call_matches_hand_built_tree() {
        let asts = parse_mini_c("int f(){return g(1);}").unwrap();
        assert_eq!(asts.len(), 1);
        let ast = &asts[0];
        // Hand-built expected tree in preorder: (kind, label, children).
        use AstNodeKind::{Property as P, Token as T};
        let expected: Vec<(AstNodeKind, &str, Vec<u32>)> = vec![
            (P, "FunctionDefinition", vec![1, 3, 6]),
            (P, "SimpleDeclSpecifier", vec![2]),
            (T, "int", vec![]),
            (P, "FunctionDeclarator", vec![4]),
            (P, "Name", vec![5]),
            (T, "f", vec![]),
            (P, "CompoundStatement", vec![7]),
            (P, "ReturnStatement", vec![8, 9]),
            (T, "return", vec![]),
            (P, "FunctionCallExpression", vec![10, 13]),
            (P, "IdExpression", vec![11]),
            (P, "Name", vec![12]),
            (T, "g", vec![]),
            (P, "LiteralExpression", vec![14]),
            (T, "1", vec![]),
        ];
        assert_eq!(ast.nodes.len(), expected.len());
        for (node, (kind, label, children)) in ast.nodes.iter().zip(&expected) {
            assert_eq!(node.kind, *kind, "node {}", node.id);
            assert_eq!(node.label, *label, "node {}", node.id);
            assert_eq!(&node.children, children, "node {}", node.id);
        }
        let l = labels(ast);
        assert_eq!(l.iter().filter(|x| **x == "FunctionCallExpression").count(), 1);
        assert_eq!(l.iter().filter(|x| **x == "ReturnStatement").count(), 1);
    }

    #[test]
    fn dump_relocs_shape() {
        let src = "static void dump_relocs (bfd *abfd){\n    bfd_map_over_sections (abfd, dump_relocs_in_section, NULL);}";
        let asts = parse_mini_c(src).unwrap();
        let ast = &asts[0];
        assert_eq!(ast.routine_name, "dump_relocs");
        let root = ast.node(ast.root);
        let tops: Vec<_> = root.children.iter().map(|c| ast.node(*c).label.as_str()).collect();
        assert_eq!(tops, vec!["SimpleDeclSpecifier", "FunctionDeclarator", "CompoundStatement"]);
        let frontier: Vec<_> = ast.token_frontier().into_iter().map(|(_, l)| l).collect();
        assert_eq!(
            frontier,
            vec![
                "static void",
                "dump_relocs",
                "bfd",
                "*",
                "abfd",
                "bfd_map_over_sections",
                "abfd",
                "dump_relocs_in_section",
                "NULL"
            ]
        );
        assert_eq!(ast.signature(), "static void dump_relocs bfd * abfd");
    }

    #[test]
    fn address_of_is_two_tokens() {
        let asts = parse_mini_c("int *f(int x){ return &x; }").unwrap();
        let frontier: Vec<_> = asts[0].token_frontier().into_iter().map(|(_, l)| l).collect();
        assert_eq!(frontier, vec!["int", "*", "f", "int", "x", "return", "&", "x"]);
    }

    #[test]
    fn function_pointer_parameter() {
        let src = "void m(bfd *abfd, void (*func) (bfd *, asection *, void *), void *data){ }";
        let asts = parse_mini_c(src).unwrap();
        let ast = &asts[0];
        let frontier: Vec<_> = ast.token_frontier().into_iter().map(|(_, l)| l).collect();
        assert_eq!(frontier.join(" "), "void m bfd * abfd void * func bfd * asection * void * void * data");
        assert!(labels(ast).contains(&"FunctionDeclarator"));
    }

    #[test]
    fn statements_and_expressions() {
        let src = r#"
            static int g(const char *s, int n) {
                unsigned long total = 0, k;
                int buf[16];
                for (k = 0; k < n; k++) {
                    if (s[k] == '\0') break; else total += (unsigned long) s[k];
                }
                while (n-- > 0) { total = total ? total * 2 : 1; }
                do { n++; } while (n < 3);
                switch (n) { case 1: return -1; default: break; }
                p->next = sizeof(int) + sizeof buf;
                again: goto again;
                return (int) total;
            }"#;
        let asts = parse_mini_c(src).unwrap();
        let ast = &asts[0];
        ast.validate().unwrap();
        let l = labels(ast);
        for want in [
            "ForStatement",
            "IfStatement",
            "WhileStatement",
            "DoStatement",
            "SwitchStatement",
            "CaseStatement",
            "DefaultStatement",
            "CastExpression",
            "ConditionalExpression",
            "FieldReference",
            "TypeIdExpression",
            "ArrayDeclarator",
            "ArraySubscriptExpression",
            "LabelStatement",
            "GotoStatement",
            "EqualsInitializer",
        ] {
            assert!(l.contains(&want), "missing {want}");
        }
        let frontier: Vec<_> = ast.token_frontier().into_iter().map(|(_, l)| l).collect();
        assert_eq!(frontier, lexer::significant_tokens(src).unwrap());
    }

    #[test]
    fn prototypes_and_globals_are_skipped() {
        let src = "int g(int); static int counter = 3; struct s { int a; }; typedef int T;\nint f(void){ return 0; }";
        let asts = parse_mini_c(src).unwrap();
        assert_eq!(asts.len(), 1);
        assert_eq!(asts[0].routine_name, "f");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_mini_c("int f() {\n  return 1 +; }").unwrap_err();
        match err {
            FrontendError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 13)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsupported_constructs_are_named() {
        let err = parse_mini_c("int f() { int x = ({ 1; }); }").unwrap_err();
        assert!(matches!(err, FrontendError::Unsupported { ref construct, .. } if construct == "statement expression"));
        let err = parse_mini_c("int f() { struct p { int a; } v; }").unwrap_err();
        assert!(matches!(err, FrontendError::Unsupported { ref construct, .. } if construct == "tag definition"));
    }

    #[test]
    fn labels_outside_vocabulary_are_rejected() {
        let rules = CompressRuleset::from_json(
            r#"{"language":"c","call_names":["FunctionCallExpression"],
                "names":[{"name":"FunctionDefinition","category":"other","compressible":false}]}"#,
        )
        .unwrap();
        let err = parse_mini_c_with_vocabulary("int f(){}", &rules).unwrap_err();
        assert!(matches!(err, FrontendError::UnknownLabel { .. }));
    }
}

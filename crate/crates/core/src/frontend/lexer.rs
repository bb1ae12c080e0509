//! Mini-C tokenizer.
//!
//! Comments and preprocessor lines are blanked out before scanning so that
//! line/column positions still refer to the original text. Adjacent
//! declaration-specifier keywords (`static`, `const`, `unsigned`, `int`, ...)
//! are fused into one lexeme, matching the way the AST keeps a whole
//! specifier run such as `static void` as a single terminal.

use super::FrontendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Ident,
    /// Control keywords: `if`, `return`, `sizeof`, ...
    Keyword,
    /// A fused run of declaration-specifier keywords.
    Specifier,
    Number,
    Str,
    Char,
    Operator,
    /// Structural punctuation. Never becomes an AST token.
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexeme {
    pub kind: LexKind,
    pub text: String,
    pub line: u32,
    pub col: u32,
}

impl Lexeme {
    pub fn is(&self, text: &str) -> bool {
        self.text == text && matches!(self.kind, LexKind::Punct | LexKind::Operator | LexKind::Keyword)
    }

    /// Whether this lexeme ends up as a terminal node in the AST.
    pub fn is_significant(&self) -> bool {
        self.kind != LexKind::Punct
    }
}

pub const CONTROL_KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "do", "switch", "case", "default", "return", "break", "continue",
    "goto", "sizeof", "typedef", "asm", "__asm__", "_Generic",
];

pub const SPECIFIER_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
    "const", "volatile", "static", "extern", "register", "inline", "auto", "restrict", "struct",
    "union", "enum",
];

/// Keywords that name a base type (as opposed to qualifiers and storage classes).
pub const BASE_TYPE_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
    "struct", "union", "enum",
];

const OPERATORS: &[&str] = &[
    "...", ">>=", "<<=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "^=", "|=", "+", "-", "*", "/", "%", "<", ">", "=", "!", "~",
    "&", "|", "^", ".",
];

const PUNCT: &[char] = &['(', ')', '{', '}', '[', ']', ',', ';', ':', '?'];

/// Blank out comments and preprocessor directives, keeping newlines.
pub fn strip_comments_and_directives(source: &str) -> String {
    let chars: Vec<char> = source.chars().collect();
    let mut out = String::with_capacity(source.len());
    let mut i = 0;
    let mut at_line_start = true;
    while i < chars.len() {
        let c = chars[i];
        if at_line_start && c == '#' {
            // Directive, including backslash continuations.
            while i < chars.len() {
                if chars[i] == '\\' && chars.get(i + 1) == Some(&'\n') {
                    out.push(' ');
                    out.push('\n');
                    i += 2;
                    continue;
                }
                if chars[i] == '\n' {
                    break;
                }
                out.push(' ');
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                out.push(' ');
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            out.push_str("  ");
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                out.push(if chars[i] == '\n' { '\n' } else { ' ' });
                i += 1;
            }
            if i < chars.len() {
                out.push_str("  ");
                i += 2;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            // Copy literals verbatim so comment markers inside them survive.
            out.push(c);
            i += 1;
            while i < chars.len() && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' && i + 1 < chars.len() {
                    out.push(chars[i]);
                    i += 1;
                }
                out.push(chars[i]);
                i += 1;
            }
            if i < chars.len() && chars[i] == c {
                out.push(c);
                i += 1;
            }
            at_line_start = false;
            continue;
        }
        if c == '\n' {
            at_line_start = true;
        } else if !c.is_whitespace() {
            at_line_start = false;
        }
        out.push(c);
        i += 1;
    }
    out
}

/// Scan source text into lexemes (punctuation included).
pub fn lex(source: &str) -> Result<Vec<Lexeme>, FrontendError> {
    let cleaned = strip_comments_and_directives(source);
    let chars: Vec<char> = cleaned.chars().collect();
    let mut raw: Vec<Lexeme> = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        let (start_line, start_col) = (line, col);
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if CONTROL_KEYWORDS.contains(&word.as_str()) {
                LexKind::Keyword
            } else if SPECIFIER_KEYWORDS.contains(&word.as_str()) {
                LexKind::Specifier
            } else {
                LexKind::Ident
            }
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let hex = chars[start..i].iter().any(|x| *x == 'x' || *x == 'X');
                let exponent_sign = (d == '+' || d == '-')
                    && match chars[i - 1] {
                        'e' | 'E' => !hex,
                        'p' | 'P' => hex,
                        _ => false,
                    };
                if d.is_ascii_alphanumeric() || d == '.' || d == '_' || exponent_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            LexKind::Number
        } else if c == '"' || c == '\'' {
            i += 1;
            while i < chars.len() && chars[i] != c {
                if chars[i] == '\n' {
                    return Err(FrontendError::Syntax {
                        line: start_line,
                        col: start_col,
                        message: "unterminated literal".into(),
                    });
                }
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            if i >= chars.len() {
                return Err(FrontendError::Syntax {
                    line: start_line,
                    col: start_col,
                    message: "unterminated literal".into(),
                });
            }
            i += 1;
            if c == '"' {
                LexKind::Str
            } else {
                LexKind::Char
            }
        } else if PUNCT.contains(&c) {
            i += 1;
            LexKind::Punct
        } else if let Some(op) = OPERATORS.iter().find(|op| {
            let n = op.len();
            i + n <= chars.len() && chars[i..i + n].iter().copied().eq(op.chars())
        }) {
            i += op.len();
            LexKind::Operator
        } else {
            return Err(FrontendError::Syntax {
                line,
                col,
                message: format!("unexpected character {c:?}"),
            });
        };
        col += (i - start) as u32;
        raw.push(Lexeme {
            kind,
            text: chars[start..i].iter().collect(),
            line: start_line,
            col: start_col,
        });
    }

    // Fuse adjacent specifier keywords.
    let mut out: Vec<Lexeme> = Vec::with_capacity(raw.len());
    for lx in raw {
        if lx.kind == LexKind::Specifier {
            if let Some(prev) = out.last_mut() {
                if prev.kind == LexKind::Specifier && !ends_with_tag_keyword(&prev.text) {
                    prev.text.push(' ');
                    prev.text.push_str(&lx.text);
                    continue;
                }
            }
        }
        out.push(lx);
    }
    Ok(out)
}

/// `struct`/`union`/`enum` must be followed by a tag, so a run ends there.
pub fn ends_with_tag_keyword(run: &str) -> bool {
    matches!(run.rsplit(' ').next(), Some("struct" | "union" | "enum"))
}

/// The token sequence a parsed routine is expected to reproduce.
pub fn significant_tokens(source: &str) -> Result<Vec<String>, FrontendError> {
    Ok(lex(source)?
        .into_iter()
        .filter(Lexeme::is_significant)
        .map(|l| l.text)
        .collect())
}

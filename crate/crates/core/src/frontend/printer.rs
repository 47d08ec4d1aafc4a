//! Source printer. Output parses back to a structurally equal AST.

use std::fmt::Write;

use super::ast::*;
use super::parser::precedence;

pub fn print_contract(c: &ContractAst) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "contract {} {{", c.name);
    for v in &c.state_vars {
        let fin = if v.is_final { "final " } else { "" };
        let _ = writeln!(out, "    {fin}{} {};", print_type(&v.ty), v.name);
    }
    for (i, f) in c.functions.iter().enumerate() {
        if i > 0 || !c.state_vars.is_empty() {
            out.push('\n');
        }
        print_function(&mut out, f);
    }
    out.push_str("}\n");
    out
}

fn print_params(ps: &[Param]) -> String {
    ps.iter()
        .map(|p| format!("{} {}", print_type(&p.ty), p.name))
        .collect::<Vec<_>>()
        .join(", ")
}

fn print_function(out: &mut String, f: &FunctionDecl) {
    let _ = write!(out, "    function {}({}) public", f.name, print_params(&f.params));
    if !f.returns.is_empty() {
        let _ = write!(out, " returns ({})", print_params(&f.returns));
    }
    out.push_str(" {\n");
    if let StmtKind::Seq(stmts) = &f.body.kind {
        for s in stmts {
            print_stmt(out, s, 2);
        }
    } else {
        print_stmt(out, &f.body, 2);
    }
    out.push_str("    }\n");
}

pub fn print_data_type(d: &DataType) -> String {
    match d {
        DataType::Bool => "bool".into(),
        DataType::Uint256 => "uint".into(),
        DataType::Address => "address".into(),
        DataType::Bin => "bin".into(),
        DataType::Mapping { key, value } => {
            format!("mapping({} => {})", print_data_type(key), print_type(value))
        }
        DataType::NamedMapping { tag, value } => {
            format!("mapping(address !{tag} => {})", print_type(value))
        }
        DataType::Array { elem } => {
            let inner = print_data_type(&elem.data);
            match &elem.owner {
                OwnerAtom::All => format!("{inner}[]"),
                o => format!("{inner}[@{o}]"),
            }
        }
        DataType::NamedAddressArray { tag } => format!("address[!{tag}]"),
    }
}

pub fn print_type(t: &AnnotatedType) -> String {
    match &t.owner {
        OwnerAtom::All => print_data_type(&t.data),
        o => format!("{} @{o}", print_data_type(&t.data)),
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block_body(out: &mut String, s: &Stmt, level: usize) {
    match &s.kind {
        StmtKind::Seq(v) => v.iter().for_each(|s| print_stmt(out, s, level)),
        _ => print_stmt(out, s, level),
    }
}

fn print_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::Skip => out.push_str(";\n"),
        StmtKind::Decl { name, ty, init } => {
            let _ = write!(out, "{} {name}", print_type(ty));
            if let Some(e) = init {
                let _ = write!(out, " = {}", print_expr(e));
            }
            out.push_str(";\n");
        }
        StmtKind::Assign { target, value } => {
            let _ = writeln!(out, "{} = {};", print_expr(target), print_expr(value));
        }
        StmtKind::Seq(v) => {
            out.push_str("{\n");
            v.iter().for_each(|s| print_stmt(out, s, level + 1));
            indent(out, level);
            out.push_str("}\n");
        }
        StmtKind::Require(e) => {
            let _ = writeln!(out, "require({});", print_expr(e));
        }
        StmtKind::If { .. } => {
            print_if(out, s, level);
            out.push('\n');
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while ({}) {{", print_expr(cond));
            print_block_body(out, body, level + 1);
            indent(out, level);
            out.push_str("}\n");
        }
        StmtKind::Return(v) => {
            if v.is_empty() {
                out.push_str("return;\n");
            } else {
                let vals: Vec<_> = v.iter().map(print_expr).collect();
                let _ = writeln!(out, "return {};", vals.join(", "));
            }
        }
    }
}

/// Prints an `if` chain without the trailing newline so `else if` can be
/// continued on the same line.
fn print_if(out: &mut String, s: &Stmt, level: usize) {
    let StmtKind::If { cond, then, els } = &s.kind else {
        unreachable!()
    };
    let _ = writeln!(out, "if ({}) {{", print_expr(cond));
    print_block_body(out, then, level + 1);
    indent(out, level);
    out.push('}');
    match &els.kind {
        StmtKind::Seq(v) if v.is_empty() => {}
        StmtKind::Seq(v) if v.len() == 1 && matches!(v[0].kind, StmtKind::If { .. }) => {
            out.push_str(" else ");
            print_if(out, &v[0], level);
        }
        _ => {
            out.push_str(" else {\n");
            print_block_body(out, els, level + 1);
            indent(out, level);
            out.push('}');
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Const(Literal::Uint(n)) => n.clone(),
        ExprKind::Const(Literal::Bool(b)) => b.to_string(),
        ExprKind::MeAddr => "me".into(),
        ExprKind::Location { base, indexes } => {
            let mut s = base.clone();
            for i in indexes {
                let _ = write!(s, "[{}]", print_expr(i));
            }
            s
        }
        ExprKind::Reveal { inner, target } => format!("reveal({}, {target})", print_expr(inner)),
        ExprKind::Ternary { cond, then, els } => format!(
            "({} ? {} : {})",
            print_expr(cond),
            print_expr(then),
            print_expr(els)
        ),
        ExprKind::Apply { op, args } => match (op, args.as_slice()) {
            (NativeOp::Length, [a]) => format!("{}.length", operand(a, precedence(*op) + 1)),
            (NativeOp::Not, [a]) => format!("!{}", operand(a, precedence(*op))),
            (op, [a, b]) => {
                let p = precedence(*op);
                format!("{} {} {}", operand(a, p), op.symbol(), operand(b, p + 1))
            }
            (op, args) => {
                let args: Vec<_> = args.iter().map(print_expr).collect();
                format!("{}({})", op.symbol(), args.join(", "))
            }
        },
    }
}

/// Print `e` as an operand that needs at least precedence `min`.
fn operand(e: &Expr, min: u8) -> String {
    let s = print_expr(e);
    match &e.kind {
        ExprKind::Apply { op, args } if args.len() <= 2 && precedence(*op) < min => format!("({s})"),
        _ => s,
    }
}

#!/usr/bin/env python3
"""
CLI principal de la boîte à outils de recherche en faisceau.

Ce module expose une interface en ligne de commande pour décoder avec les
différentes stratégies d'arrêt, comparer ces stratégies, régler la
récompense de longueur et vérifier les garanties d'optimalité.

Commandes disponibles :
1. decode - Décode chaque source et écrit un enregistrement JSONL par ligne
2. compare - Grille stratégie × b × r agrégée en CSV
3. tune - Réglage de la récompense de longueur bornée (r × b, meilleur b par r)
4. verify - Campagne d'essais aléatoires contre les oracles de force brute
5. make-model - Écrit un modèle table JSON à partir d'une spécification

Codes de retour : 0 succès, 1 invariant en échec (verify), 2 erreur d'usage ou d'E/S.
"""

import argparse
import json
import logging
import os
import sys

from beam_types import DEFAULT_LENGTH_RATIO, DEFAULT_MAX_STEPS, InputError, Strategy, TieBreak
from experiment_runner import (
    COMPARE_HEADER,
    TUNE_LENGTH_RATIO,
    TUNE_BEAM_SIZES,
    TUNE_HEADER,
    TUNE_REWARDS,
    RunSpec,
    format_float,
    VerifyBounds,
    run_compare,
    run_decode,
    run_tune,
    run_verify,
)
from report_utils import export_verify_report_txt, write_csv, write_jsonl, write_output
from scoring_models import TableModel, load_model, materialize_table, write_table_model

EXIT_OK = 0
EXIT_INVARIANT_FAILURE = 1
EXIT_USAGE = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def parse_common_args(parser, tune: bool = False):
    """
    Ajoute les arguments communs aux commandes decode, compare et tune.

    Args:
        parser: L'objet ArgumentParser auquel ajouter les arguments
        tune: Valeurs par défaut de la grille de réglage (r, b = 1..20, ratio 1.27)
    """
    parser.add_argument(
        '--model',
        required=True,
        help='Spécification du modèle (seeded:..., copy:..., table:..., ngram:...) ou fichier JSON'
    )
    sources = parser.add_mutually_exclusive_group()
    sources.add_argument(
        '--source',
        help='Fichier de sources, une phrase par ligne (symboles séparés par des espaces)'
    )
    sources.add_argument(
        '--num-sources',
        type=int,
        default=0,
        help='Nombre de sources aléatoires tirées du vocabulaire (avec --seed)'
    )
    parser.add_argument(
        '--strategy',
        action='append',
        choices=[s.value for s in Strategy],
        help='Stratégie d\'arrêt (répétable ; défaut: '
             + ('optimal_bounded_simplified' if tune else 'optimal') + ')'
    )
    parser.add_argument(
        '--beam-size',
        action='append',
        type=int,
        help='Taille de faisceau b (répétable ; défaut: ' + ('1..20' if tune else '5') + ')'
    )
    parser.add_argument(
        '--reward',
        action='append',
        type=float,
        help='Récompense de longueur r (répétable ; défaut: '
             + (', '.join(str(r) for r in TUNE_REWARDS) if tune else '0') + ')'
    )
    parser.add_argument(
        '--length-ratio',
        type=float,
        default=TUNE_LENGTH_RATIO if tune else DEFAULT_LENGTH_RATIO,
        help='Ratio longueur cible / longueur source pour l = ratio·|x|'
    )
    parser.add_argument(
        '--max-steps',
        type=int,
        default=DEFAULT_MAX_STEPS,
        help=f'Nombre maximal d\'étapes (défaut: {DEFAULT_MAX_STEPS})'
    )
    parser.add_argument(
        '--tie-break',
        choices=[t.value for t in TieBreak],
        default=TieBreak.LEXICOGRAPHIC.value,
        help='Départage des scores égaux (défaut: lex)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=0,
        help='Graine des sources aléatoires (défaut: 0)'
    )
    parser.add_argument(
        '--workers',
        type=int,
        default=1,
        help='Nombre de threads (l\'ordre de sortie ne change pas)'
    )
    parser.add_argument(
        '--out',
        help='Fichier de sortie (défaut: sortie standard)'
    )


def build_run_spec(args, tune: bool = False) -> RunSpec:
    default_strategy = Strategy.OPTIMAL_BOUNDED_SIMPLIFIED if tune else Strategy.OPTIMAL
    return RunSpec(
        model=args.model,
        source=args.source,
        num_sources=args.num_sources,
        strategies=tuple(args.strategy or (default_strategy.value,)),
        beam_sizes=tuple(args.beam_size or (TUNE_BEAM_SIZES if tune else (5,))),
        rewards=tuple(args.reward or (TUNE_REWARDS if tune else (0.0,))),
        length_ratio=args.length_ratio,
        max_steps=args.max_steps,
        seed=args.seed,
        tie_break=TieBreak(args.tie_break),
        workers=args.workers,
    )


def load_inputs(spec: RunSpec):
    """Charge le modèle et les sources ; les erreurs d'E/S nomment le fichier."""
    try:
        model = spec.load_model()
    except (OSError, ValueError) as e:
        raise InputError(f"Impossible de lire le modèle '{spec.model}': {e}") from None
    try:
        sources = spec.load_sources(model)
    except OSError as e:
        raise InputError(f"Impossible de lire les sources '{spec.source}': {e}") from None
    return model, sources


def csv_cell(key: str, value) -> str:
    """Cellule CSV d'un enregistrement de décodage ; les réels suivent format_float."""
    if key == 'tokens':
        return ' '.join(value)
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def cmd_decode(args):
    """
    Commande de décodage : un enregistrement JSONL par ligne de source.

    Args:
        args: Arguments de la ligne de commande (une seule stratégie, un b, un r)

    Returns:
        int: Code de retour (0 = succès)
    """
    spec = build_run_spec(args)
    config = spec.single_config()
    for warning in config.warnings():
        print(f"⚠️ {warning}", file=sys.stderr)
    model, sources = load_inputs(spec)

    records = run_decode(model, sources, config, spec.workers)
    if args.format == 'csv':
        header = list(records[0]) if records else [
            'source', 'tokens', 'score', 'revised_score', 'stop_step', 'items_expanded',
            'completed', 'strategy', 'b', 'r', 'l']
        rows = [[csv_cell(k, v) for k, v in r.items()] for r in records]
        write_csv(header, rows, args.out)
    else:
        write_jsonl(records, args.out)
    print(f"✅ {len(records)} source(s) décodée(s)", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args):
    """
    Commande de comparaison : une ligne CSV par cellule (stratégie, b, r).

    Returns:
        int: Code de retour (0 = succès)
    """
    spec = build_run_spec(args)
    model, sources = load_inputs(spec)
    print(f"📊 {len(spec.configs())} cellule(s) × {len(sources)} source(s)", file=sys.stderr)

    rows = run_compare(model, sources, spec)
    if args.format == 'jsonl':
        write_jsonl((row.to_dict() for row in rows), args.out)
    else:
        write_csv(COMPARE_HEADER, (row.csv_fields() for row in rows), args.out)
    print(f"✅ {len(rows)} ligne(s) écrite(s)", file=sys.stderr)
    return EXIT_OK


def cmd_tune(args):
    """
    Commande de réglage de r : cellules (r, b) puis une ligne best_b par r.

    Returns:
        int: Code de retour (0 = succès)
    """
    spec = build_run_spec(args, tune=True)
    model, sources = load_inputs(spec)
    print(f"📊 Réglage de r sur {len(spec.rewards)} valeur(s) × {len(spec.beam_sizes)} "
          f"taille(s) de faisceau", file=sys.stderr)

    rows = run_tune(model, sources, spec)
    if args.format == 'jsonl':
        write_jsonl((row.to_dict() for row in rows), args.out)
    else:
        write_csv(TUNE_HEADER, (row.csv_fields() for row in rows), args.out)
    for row in rows:
        if row.row == 'best_b':
            print(f"  r={row.r:g}: meilleur b={row.b} (score révisé moyen {row.mean_revised:.4f})",
                  file=sys.stderr)
    return EXIT_OK


def cmd_verify(args):
    """
    Commande de vérification : essais aléatoires sur des modèles graines.

    Écrit un verdict JSONL par essai, puis la synthèse par invariant.

    Returns:
        int: 0 si tous les invariants tiennent, 1 sinon
    """
    bounds = VerifyBounds(
        trials=args.trials,
        vocab_min=args.vocab_min,
        vocab_max=args.vocab_max,
        steps_min=args.steps_min,
        steps_max=args.steps_max,
        beam_max=args.beam_max,
        seed=args.seed,
    )
    print(f"🔍 {bounds.trials} essai(s) de vérification (graine {bounds.seed})", file=sys.stderr)
    outcomes, summary = run_verify(bounds, args.workers)
    records = [outcome.to_dict() for outcome in outcomes]
    write_jsonl(records, args.out)

    print("\n📊 Résultats par invariant:", file=sys.stderr)
    for name, count in summary.passed.items():
        failed = summary.failed[name]
        status = "✅" if failed == 0 else "❌"
        print(f"  {status} {name}: {count}/{summary.trials}", file=sys.stderr)
    if summary.divergences:
        print(f"  ℹ️ divergences des critères bornés (sommet complété): {summary.divergences}",
              file=sys.stderr)

    if args.report:
        settings = {
            'trials': bounds.trials,
            'vocab': f"{bounds.vocab_min}..{bounds.vocab_max}",
            'max_steps': f"{bounds.steps_min}..{bounds.steps_max}",
            'b': f"1..{bounds.beam_max}",
            'r': ', '.join(str(r) for r in bounds.rewards),
            'ratio': ', '.join(str(r) for r in bounds.ratios),
            'seed': bounds.seed,
        }
        export_verify_report_txt(summary.to_dict(), settings,
                                 [r for r in records if not r['passed']])

    if not summary.all_passed:
        print(f"\n❌ {len(summary.failed_trials)} essai(s) en échec", file=sys.stderr)
        return EXIT_INVARIANT_FAILURE
    print(f"\n✅ Tous les invariants tiennent ({summary.trials} essai(s))", file=sys.stderr)
    return EXIT_OK


def cmd_make_model(args):
    """
    Commande pour écrire un modèle table JSON (fixtures reproductibles).

    Les modèles graines, de copie et n-grammes sont matérialisés jusqu'à
    la profondeur --depth.

    Returns:
        int: Code de retour (0 = succès)
    """
    try:
        model = load_model(args.model)
    except (OSError, ValueError) as e:
        raise InputError(f"Impossible de lire le modèle '{args.model}': {e}") from None
    if not isinstance(model, TableModel):
        model = materialize_table(model, args.depth)
    text = write_table_model(model, args.out)
    if not args.out:
        write_output(text)
    else:
        print(f"💾 Modèle écrit: {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Recherche en faisceau avec arrêt optimal - décodage, comparaison, vérification',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exemples d'utilisation:

  # Décoder un fichier de sources avec le certificat d'optimalité
  python cli.py decode --model tests/fixtures/stationary.json --source sources.txt --beam-size 3

  # Comparer le critère par défaut et le certificat pour b = 1..4
  python cli.py compare --model "copy:base=seeded:v=6,seed=7,bias=2.0,slack=0" --num-sources 100 \\
      --strategy default --strategy optimal --beam-size 1 --beam-size 2 --beam-size 3 --beam-size 4

  # Régler la récompense de longueur (grille r × b complète par défaut)
  python cli.py tune --model "copy:base=seeded:v=6,seed=7,bias=2.0,slack=0" --num-sources 100 --out tune.csv

  # Vérifier les garanties sur 500 modèles aléatoires, avec rapport texte (dans reports/)
  python cli.py verify --trials 500 --report

  # Écrire le modèle stationnaire en JSON
  python cli.py make-model --model "table:stationary,0.6,0.3,0.1" --out stationary.json
        """
    )
    parser.add_argument(
        '--log-level',
        default=os.environ.get('BEAMSTOP_LOG_LEVEL', 'WARNING'),
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Niveau de journalisation (défaut: BEAMSTOP_LOG_LEVEL ou WARNING)'
    )

    subparsers = parser.add_subparsers(dest='command', help='Commandes disponibles')

    decode_parser = subparsers.add_parser('decode', help='Décoder chaque ligne de source')
    parse_common_args(decode_parser)
    decode_parser.add_argument('--format', choices=['csv', 'jsonl'], default='jsonl',
                               help='Format de sortie (défaut: jsonl)')

    compare_parser = subparsers.add_parser('compare', help='Comparer les stratégies sur une grille')
    parse_common_args(compare_parser)
    compare_parser.add_argument('--format', choices=['csv', 'jsonl'], default='csv',
                                help='Format de sortie (défaut: csv)')

    tune_parser = subparsers.add_parser('tune', help='Régler la récompense de longueur bornée')
    parse_common_args(tune_parser, tune=True)
    tune_parser.add_argument('--format', choices=['csv', 'jsonl'], default='csv',
                             help='Format de sortie (défaut: csv)')

    verify_parser = subparsers.add_parser('verify', help='Vérifier les garanties sur des essais aléatoires')
    verify_parser.add_argument('--trials', type=int, default=500, help='Nombre d\'essais (défaut: 500)')
    verify_parser.add_argument('--seed', type=int, default=0, help='Graine de la campagne (défaut: 0)')
    verify_parser.add_argument('--vocab-min', type=int, default=3, help='Taille minimale de vocabulaire')
    verify_parser.add_argument('--vocab-max', type=int, default=6, help='Taille maximale de vocabulaire')
    verify_parser.add_argument('--steps-min', type=int, default=6, help='max_steps minimal')
    verify_parser.add_argument('--steps-max', type=int, default=10, help='max_steps maximal')
    verify_parser.add_argument('--beam-max', type=int, default=8, help='Taille de faisceau maximale')
    verify_parser.add_argument('--workers', type=int, default=1, help='Nombre de threads')
    verify_parser.add_argument('--out', help='Fichier JSONL des verdicts (défaut: sortie standard)')
    verify_parser.add_argument('--report', action='store_true',
                               help='Sauvegarder aussi un rapport texte horodaté dans reports/')

    make_parser = subparsers.add_parser('make-model', help='Écrire un modèle table JSON')
    make_parser.add_argument('--model', required=True, help='Spécification du modèle')
    make_parser.add_argument('--depth', type=int, default=2,
                             help='Profondeur de matérialisation des préfixes (défaut: 2)')
    make_parser.add_argument('--out', help='Fichier de sortie (défaut: sortie standard)')
    return parser


COMMANDS = {
    'decode': cmd_decode,
    'compare': cmd_compare,
    'tune': cmd_tune,
    'verify': cmd_verify,
    'make-model': cmd_make_model,
}


def main(argv=None):
    """
    Point d'entrée principal du CLI.

    Returns:
        int: Code de retour (0 = succès, 1 = invariant en échec, 2 = erreur d'usage ou d'E/S)
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, stream=sys.stderr)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except (InputError, OSError, json.JSONDecodeError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())

#!/usr/bin/env python3
"""
Module utilitaire pour écrire les résultats et les rapports.

Les données (JSONL, CSV) vont vers un fichier ou la sortie standard et sont
déterministes à l'octet près. Les rapports texte lisibles sont horodatés et
sauvegardés dans le dossier des rapports.

Types de sorties supportés :
- Enregistrements JSONL (décodages, verdicts de vérification)
- Tableaux CSV (comparaison, réglage de r)
- Rapport texte de synthèse d'une campagne de vérification

Le dossier des rapports est 'reports/' ou la valeur de BEAMSTOP_REPORTS_DIR.
"""

import csv
import io
import json
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

REPORTS_DIR = Path(os.environ.get('BEAMSTOP_REPORTS_DIR', 'reports'))


def ensure_reports_dir(reports_dir: Optional[Path] = None) -> Path:
    """Garantit que le dossier des rapports existe et est accessible en écriture, sinon retourne le dossier courant."""
    reports_dir = Path(reports_dir) if reports_dir is not None else REPORTS_DIR
    if not reports_dir.exists():
        try:
            reports_dir.mkdir(parents=True, exist_ok=True)
        except (PermissionError, OSError):
            return Path(".")

    if os.access(reports_dir, os.W_OK):
        return reports_dir

    # Fallback sur le dossier courant si le dossier n'est pas accessible en écriture
    return Path(".")


def add_timestamp_to_filename(filename: str) -> str:
    """Ajoute un horodatage au nom de fichier."""
    timestamp = datetime.now().strftime('%Y-%m-%d_%H-%M-%S')
    path = Path(filename)
    if path.suffix:
        return f"{path.stem}_{timestamp}{path.suffix}"
    return f"{filename}_{timestamp}"


def jsonl_text(records: Iterable[Dict]) -> str:
    return ''.join(json.dumps(record, ensure_ascii=False) + '\n' for record in records)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_output(text: str, path: Optional[str] = None):
    """
    Écrit le texte dans le fichier demandé, ou sur la sortie standard.

    Raises:
        OSError: Fichier non inscriptible
    """
    if path:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def write_jsonl(records: Iterable[Dict], path: Optional[str] = None):
    write_output(jsonl_text(records), path)


def write_csv(header: Sequence[str], rows: Iterable[Sequence[str]], path: Optional[str] = None):
    write_output(csv_text(header, rows), path)


def export_verify_report_txt(summary: Dict, settings: Dict, failures: List[Dict],
                             output_file: str = "verify_report.txt",
                             reports_dir: Optional[Path] = None) -> Optional[Path]:
    """Exporte la synthèse d'une campagne de vérification en format texte lisible."""
    reports_dir = ensure_reports_dir(reports_dir)
    output_path = reports_dir / add_timestamp_to_filename(output_file)

    try:
        with open(output_path, 'w', encoding='utf-8') as f:
            f.write("=" * 80 + "\n")
            f.write("RAPPORT DE VÉRIFICATION DE LA RECHERCHE EN FAISCEAU\n")
            f.write("=" * 80 + "\n\n")
            f.write(f"Date de génération: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
            f.write(f"Nombre d'essais: {summary.get('trials', 0)}\n\n")

            f.write("PARAMÈTRES\n")
            f.write("-" * 80 + "\n")
            for key, value in settings.items():
                f.write(f"{key}: {value}\n")
            f.write("\n")

            f.write("RÉSULTATS PAR INVARIANT\n")
            f.write("-" * 80 + "\n")
            passed = summary.get('passed', {})
            failed = summary.get('failed', {})
            for name in passed:
                status = "✅" if failed.get(name, 0) == 0 else "❌"
                f.write(f"{status} {name}: {passed[name]} réussis, {failed.get(name, 0)} en échec\n")
            f.write(f"\nDivergences des critères bornés (sommet complété): "
                    f"{summary.get('divergences', 0)}\n\n")

            if failures:
                f.write("=" * 80 + "\n")
                f.write("ESSAIS EN ÉCHEC\n")
                f.write("=" * 80 + "\n\n")
                for idx, record in enumerate(failures, 1):
                    f.write(f"ESSAI {idx}/{len(failures)} (n° {record.get('trial')})\n")
                    f.write("-" * 80 + "\n")
                    f.write(f"Modèle: {record.get('model')}\n")
                    f.write(f"Source: {record.get('source')}\n")
                    f.write(f"b={record.get('b')}  max_steps={record.get('max_steps')}  "
                            f"r={record.get('r')}  ratio={record.get('ratio')}\n")
                    bad = [name for name, ok in record.get('checks', {}).items() if not ok]
                    f.write(f"Invariants en échec: {', '.join(bad)}\n\n")

        print(f"💾 Rapport texte sauvegardé: {output_path.absolute()}", file=sys.stderr)
        return output_path
    except (PermissionError, OSError) as e:
        print(f"⚠️ Impossible de sauvegarder le rapport {output_path.name}: {e}", file=sys.stderr)
        return None

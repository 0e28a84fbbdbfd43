# flake8: NOQA E5
import sys
from pathlib import Path
from typing import Dict, List

cwd = Path(__file__).parent
project_root = cwd.parent

sys.path.insert(0, str(project_root))

about: Dict[str, str] = {}
with open(project_root / "sonsim" / "__about__.py") as fp:
    exec(fp.read(), about)

extensions = [
    "sphinx.ext.autodoc",
    "autoapi.extension",
    "sphinx.ext.intersphinx",
    "sphinx_autodoc_typehints",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_autoissues",
    "sphinx_click.ext",
    "sphinx_inline_tabs",
    "sphinx_copybutton",
    "sphinxext.opengraph",
    "myst_parser",
]

myst_enable_extensions = ["colon_fence", "dollarmath", "substitution"]

source_suffix = {".rst": "restructuredtext", ".md": "markdown"}
master_doc = "index"

project = about["__title__"]
copyright = about["__copyright__"]
version = ".".join(about["__version__"].split(".")[:2])
release = about["__version__"]

exclude_patterns = ["_build"]

html_theme = "furo"
html_title = f"{project} {release}"
html_theme_options: Dict[str, List[Dict[str, str]]] = {
    "footer_icons": [
        {"name": "GitHub", "url": about["__github__"], "html": "GitHub", "class": ""}
    ],
}

# sphinx-autoissues
issuetracker = "github"
issuetracker_project = about["__github__"].replace("https://github.com/", "")

# sphinx.ext.autodoc
autoclass_content = "both"
autodoc_member_order = "bysource"

# sphinx-autoapi
autoapi_type = "python"
autoapi_dirs = [project_root / "sonsim"]
autoapi_ignore = ["*/conftest.py"]
autoapi_generate_api_docs = False  # pages use the directives
suppress_warnings = ["autoapi.python_import_resolution", "autoapi.not_readable"]

# sphinx-copybutton
copybutton_prompt_text = r">>> |\.\.\. |\$ "
copybutton_prompt_is_regexp = True
copybutton_remove_prompts = True

# sphinxext.opengraph
ogp_site_url = about["__docs__"]
ogp_site_name = about["__title__"]

htmlhelp_basename = "%sdoc" % about["__title__"]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "networkx": ("https://networkx.org/documentation/stable", None),
}

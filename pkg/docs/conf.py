# Sphinx 文档配置。
# 选项说明见 https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

import sphinx_rtd_theme

# autodoc 直接从源码树导入 phasebal。
sys.path.insert(0, os.path.abspath(".."))


# -- 项目信息 -----------------------------------------------------------------

project = "phasebal"
copyright = "2026 HuajiTech"
author = "Ricky8955555"


# -- 通用配置 -----------------------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "sphinx.ext.autosummary",
    "sphinx.ext.mathjax"
]

# 文档字符串使用 `参数:` / `返回:` 小节，按原文显示。
autodoc_default_options = {
    "members": True,
    "undoc-members": False,
    "show-inheritance": True,
    "member-order": "bysource",
}
autodoc_typehints = "signature"
autosummary_generate = True

templates_path = []
language = "zh_cn"
exclude_patterns = ["_build"]


# -- HTML 输出 ----------------------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
html_static_path = []

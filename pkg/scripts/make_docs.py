"""
Generates the documentation for salad run configuration files
"""

import sys
from os.path import dirname, join

import jinja2

REPO_ROOT = dirname(dirname(__file__))

sys.path.insert(0, REPO_ROOT)

from salad._schema import RunConfig  # noqa: E402

template = """
<!--
DO NOT EDIT THIS FILE MANUALLY
Edit scripts/make_docs.py and/or salad/_schema.py
and regenerate.
-->

# Run configuration reference

Every `salad` command reads one YAML run configuration. The only required
key is the top-level `seed`; it is copied into `synth.seed`, `model.seed`
and `train.seed` unless those sections set their own. Unknown keys are
rejected.

A configuration file that is not plain YAML but contains Jinja2 markup is
rendered first, with the shell environment available as `environ`, e.g.
`epochs: {%raw%}{{ environ["EPOCHS"] }}{%endraw%}`.

Any key can also be set from the command line with
`--set section.key=value`; the value is read as YAML.

> Note: This content is also available in the CLI as `salad --help-config`

{% for name, (description, keys) in sections.items() %}
## `{{ name }}`

{{ description }}
{% for key, (key_description, default) in keys.items() %}
- `{{ name }}.{{ key }}` (default `{{ default }}`): {{ key_description }}
{%- endfor %}

{% endfor %}
"""


def _default(field):
    value = field.get_default(call_default_factory=True)
    if value is None:
        return "null"
    if isinstance(value, tuple):
        return list(value)
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    return getattr(value, "value", value)


def generate_sections():
    sections = {}
    for name, field in RunConfig.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and hasattr(annotation, "model_fields"):
            keys = {
                key: (" ".join((sub.description or "").split()), _default(sub))
                for key, sub in annotation.model_fields.items()
            }
        else:
            keys = {}
        sections[name] = (field.description, keys)
    return sections


output = jinja2.Template(template).render(sections=generate_sections())

with open(join(REPO_ROOT, "docs", "source", "config-reference.md"), "w") as f:
    f.write(output)

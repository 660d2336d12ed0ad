"""Regenerate the bundled desk-scale fixture under src/clh/data/.

The hierarchy, index and guideline texts are an abridged excerpt of
ICD-10-CM; instructional notes and guideline prose are shortened summaries.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "clh" / "data"

# (code, description, parent, notes)
TABULAR = [
    ("A00–B99", "Certain infectious and parasitic diseases", None, {
        "includes": ["diseases generally recognized as communicable or transmissible"],
        "use_additional": ["code to identify resistance to antimicrobial drugs (Z16.-)"],
        "excludes1": ["certain localized infections - see body system-related chapters"],
        "excludes2": ["carrier or suspected carrier of infectious disease (Z22.-)",
                      "influenza and other acute respiratory infections (J00-J22)"]}),
    ("A20–A28", "Certain zoonotic bacterial diseases", "A00–B99", {}),
    ("A22", "Anthrax", "A20–A28", {"includes": ["infection due to Bacillus anthracis"]}),
    ("A22.0", "Cutaneous anthrax", "A22", {}),
    ("A22.1", "Pulmonary anthrax", "A22", {}),
    ("A22.2", "Gastrointestinal anthrax", "A22", {}),
    ("A22.7", "Anthrax sepsis", "A22", {}),
    ("A22.8", "Other forms of anthrax", "A22", {}),
    ("A22.9", "Anthrax, unspecified", "A22", {}),
    ("A30–A49", "Other bacterial diseases", "A00–B99", {}),
    ("A40", "Streptococcal sepsis", "A30–A49", {
        "code_first": ["postprocedural streptococcal sepsis (T81.44)"],
        "excludes1": ["neonatal streptococcal sepsis (P36.0-P36.1)"]}),
    ("A40.0", "Sepsis due to streptococcus, group A", "A40", {}),
    ("A40.1", "Sepsis due to streptococcus, group B", "A40", {}),
    ("A40.3", "Sepsis due to Streptococcus pneumoniae", "A40", {}),
    ("A40.9", "Streptococcal sepsis, unspecified", "A40", {}),
    ("A41", "Other sepsis", "A30–A49", {
        "code_first": ["postprocedural sepsis (T81.44)"],
        "excludes1": ["bacteremia NOS (R78.81)", "anthrax sepsis (A22.7)", "streptococcal sepsis (A40.-)"]}),
    ("A41.8", "Other specified sepsis", "A41", {}),
    ("A41.81", "Sepsis due to Enterococcus", "A41.8", {}),
    ("A41.89", "Other specified sepsis", "A41.8", {}),
    ("A41.9", "Sepsis, unspecified organism", "A41", {}),
    ("E00–E89", "Endocrine, nutritional and metabolic diseases", None, {}),
    ("E08–E13", "Diabetes mellitus", "E00–E89", {}),
    ("E11", "Type 2 diabetes mellitus", "E08–E13", {
        "use_additional": ["code to identify control using insulin (Z79.4)"],
        "excludes1": ["type 1 diabetes mellitus (E10.-)"]}),
    ("E11.2", "Type 2 diabetes mellitus with kidney complications", "E11", {}),
    ("E11.21", "Type 2 diabetes mellitus with diabetic nephropathy", "E11.2", {}),
    ("E11.22", "Type 2 diabetes mellitus with diabetic chronic kidney disease", "E11.2", {
        "use_additional": ["code to identify stage of chronic kidney disease (N18.1-N18.6)"]}),
    ("E11.6", "Type 2 diabetes mellitus with other specified complications", "E11", {}),
    ("E11.65", "Type 2 diabetes mellitus with hyperglycemia", "E11.6", {}),
    ("E11.9", "Type 2 diabetes mellitus without complications", "E11", {}),
    ("E70–E88", "Metabolic disorders", "E00–E89", {}),
    ("E78", "Disorders of lipoprotein metabolism and other lipidemias", "E70–E88", {}),
    ("E78.0", "Pure hypercholesterolemia", "E78", {}),
    ("E78.00", "Pure hypercholesterolemia, unspecified", "E78.0", {}),
    ("E78.5", "Hyperlipidemia, unspecified", "E78", {}),
    ("F01–F99", "Mental, behavioral and neurodevelopmental disorders", None, {}),
    ("F01–F09", "Mental disorders due to known physiological conditions", "F01–F99", {}),
    ("F02", "Dementia in other diseases classified elsewhere", "F01–F09", {
        "code_first": ["the underlying physiological condition, such as Alzheimer's (G30.-)"]}),
    ("F02.80", "Dementia in other diseases classified elsewhere, unspecified severity, without behavioral disturbance", "F02", {}),
    ("F03", "Unspecified dementia", "F01–F09", {}),
    ("F03.90", "Unspecified dementia, unspecified severity, without behavioral disturbance", "F03", {}),
    ("F30–F39", "Mood [affective] disorders", "F01–F99", {}),
    ("F32", "Depressive episode", "F30–F39", {}),
    ("F32.9", "Major depressive disorder, single episode, unspecified", "F32", {}),
    ("F32.A", "Depression, unspecified", "F32", {}),
    ("F40–F48", "Anxiety, dissociative, stress-related, somatoform and other nonpsychotic mental disorders", "F01–F99", {}),
    ("F41", "Other anxiety disorders", "F40–F48", {}),
    ("F41.1", "Generalized anxiety disorder", "F41", {}),
    ("F41.9", "Anxiety disorder, unspecified", "F41", {}),
    ("G00–G99", "Diseases of the nervous system", None, {}),
    ("G30–G32", "Other degenerative diseases of the nervous system", "G00–G99", {}),
    ("G30", "Alzheimer's disease", "G30–G32", {
        "use_additional": ["code to identify dementia in other diseases classified elsewhere (F02.8-)"],
        "excludes1": ["senile degeneration of brain NEC (G31.1)"]}),
    ("G30.0", "Alzheimer's disease with early onset", "G30", {}),
    ("G30.1", "Alzheimer's disease with late onset", "G30", {}),
    ("G30.9", "Alzheimer's disease, unspecified", "G30", {}),
    ("I00–I99", "Diseases of the circulatory system", None, {}),
    ("I10–I1A", "Hypertensive diseases", "I00–I99", {}),
    ("I10", "Essential (primary) hypertension", "I10–I1A", {
        "includes": ["high blood pressure", "hypertension (arterial) (benign) (essential)"],
        "excludes2": ["hypertensive disease complicating pregnancy (O10-O11)"]}),
    ("I30–I5A", "Other forms of heart disease", "I00–I99", {}),
    ("I48", "Atrial fibrillation and flutter", "I30–I5A", {}),
    ("I48.0", "Paroxysmal atrial fibrillation", "I48", {}),
    ("I48.9", "Unspecified atrial fibrillation and atrial flutter", "I48", {}),
    ("I48.91", "Unspecified atrial fibrillation", "I48.9", {}),
    ("I50", "Heart failure", "I30–I5A", {
        "code_first": ["heart failure due to hypertension (I11.0)"]}),
    ("I50.2", "Systolic (congestive) heart failure", "I50", {}),
    ("I50.20", "Unspecified systolic (congestive) heart failure", "I50.2", {}),
    ("I50.21", "Acute systolic (congestive) heart failure", "I50.2", {}),
    ("I50.22", "Chronic systolic (congestive) heart failure", "I50.2", {}),
    ("I50.9", "Heart failure, unspecified", "I50", {}),
    ("J00–J99", "Diseases of the respiratory system", None, {}),
    ("J09–J18", "Influenza and pneumonia", "J00–J99", {}),
    ("J18", "Pneumonia, unspecified organism", "J09–J18", {
        "code_first": ["associated influenza, if applicable (J09.X1, J10.0-, J11.0-)"]}),
    ("J18.1", "Lobar pneumonia, unspecified organism", "J18", {}),
    ("J18.9", "Pneumonia, unspecified organism", "J18", {}),
    ("J40–J4A", "Chronic lower respiratory diseases", "J00–J99", {}),
    ("J44", "Other chronic obstructive pulmonary disease", "J40–J4A", {
        "use_additional": ["code to identify tobacco use or exposure (Z72.0, Z87.891)"]}),
    ("J44.1", "Chronic obstructive pulmonary disease with (acute) exacerbation", "J44", {}),
    ("J44.9", "Chronic obstructive pulmonary disease, unspecified", "J44", {}),
    ("N00–N99", "Diseases of the genitourinary system", None, {}),
    ("N17–N19", "Acute kidney failure and chronic kidney disease", "N00–N99", {}),
    ("N17", "Acute kidney failure", "N17–N19", {}),
    ("N17.9", "Acute kidney failure, unspecified", "N17", {}),
    ("N18", "Chronic kidney disease (CKD)", "N17–N19", {
        "code_first": ["any associated diabetic chronic kidney disease (E08.22, E09.22, E10.22, E11.22, E13.22)"]}),
    ("N18.3", "Chronic kidney disease, stage 3 (moderate)", "N18", {}),
    ("N18.30", "Chronic kidney disease, stage 3 unspecified", "N18.3", {}),
    ("N18.9", "Chronic kidney disease, unspecified", "N18", {}),
    ("N30–N39", "Other diseases of the urinary system", "N00–N99", {}),
    ("N39", "Other disorders of urinary system", "N30–N39", {}),
    ("N39.0", "Urinary tract infection, site not specified", "N39", {
        "use_additional": ["code to identify infectious agent (B95-B97)"]}),
    ("R00–R99", "Symptoms, signs and abnormal clinical and laboratory findings, not elsewhere classified", None, {}),
    ("R50–R69", "General symptoms and signs", "R00–R99", {}),
    ("R65", "Symptoms and signs specifically associated with systemic inflammation and infection", "R50–R69", {}),
    ("R65.2", "Severe sepsis", "R65", {
        "code_first": ["underlying infection, such as infection following a procedure (T81.4-)"]}),
    ("R65.20", "Severe sepsis without septic shock", "R65.2", {}),
    ("R65.21", "Severe sepsis with septic shock", "R65.2", {}),
    ("S00–T88", "Injury, poisoning and certain other consequences of external causes", None, {}),
    ("T80–T88", "Complications of surgical and medical care, not elsewhere classified", "S00–T88", {}),
    ("T81", "Complications of procedures, not elsewhere classified", "T80–T88", {}),
    ("T81.4", "Infection following a procedure", "T81", {
        "use_additional": ["code to identify infection"]}),
    ("T81.40", "Infection following a procedure, unspecified", "T81.4", {}),
    ("T81.44", "Sepsis following a procedure", "T81.4", {
        "use_additional": ["code to further identify the sepsis"]}),
    ("T81.49", "Infection following a procedure, other surgical site", "T81.4", {}),
    ("Z00–Z99", "Factors influencing health status and contact with health services", None, {}),
    ("Z66–Z66", "Do not resuscitate status", "Z00–Z99", {}),
    ("Z66", "Do not resuscitate", "Z66–Z66", {}),
    ("Z77–Z99", "Persons with potential health hazards related to family and personal history", "Z00–Z99", {}),
    ("Z79", "Long term (current) drug therapy", "Z77–Z99", {}),
    ("Z79.0", "Long term (current) use of anticoagulants and antithrombotics/antiplatelets", "Z79", {}),
    ("Z79.01", "Long term (current) use of anticoagulants", "Z79.0", {}),
    ("Z86", "Personal history of certain other diseases", "Z77–Z99", {}),
    ("Z86.7", "Personal history of diseases of the circulatory system", "Z86", {}),
    ("Z86.73", "Personal history of transient ischemic attack (TIA), and cerebral infarction without residual deficits", "Z86.7", {}),
    ("Z87", "Personal history of other diseases and conditions", "Z77–Z99", {}),
    ("Z87.8", "Personal history of other specified conditions", "Z87", {}),
    ("Z87.89", "Personal history of other specified conditions", "Z87.8", {}),
    ("Z87.891", "Personal history of nicotine dependence", "Z87.89", {}),
]

INDEX = [
    (["Sepsis"], "A41.9"),
    (["Sepsis", "anthrax"], "A22.7"),
    (["Sepsis", "postprocedural"], "T81.44"),
    (["Sepsis", "streptococcal"], "A40.9"),
    (["Sepsis", "streptococcal", "group A"], "A40.0"),
    (["Sepsis", "streptococcal", "group B"], "A40.1"),
    (["Sepsis", "streptococcal", "pneumococcal"], "A40.3"),
    (["Sepsis", "enterococcal"], "A41.81"),
    (["Sepsis", "specified organism NEC"], "A41.89"),
    (["Sepsis", "severe"], "R65.20"),
    (["Sepsis", "severe", "with septic shock"], "R65.21"),
    (["Shock", "septic"], "R65.21"),
    (["Anthrax"], "A22.9"),
    (["Anthrax", "cutaneous"], "A22.0"),
    (["Anthrax", "pulmonary"], "A22.1"),
    (["Anthrax", "gastrointestinal"], "A22.2"),
    (["Anthrax", "specified manifestation NEC"], "A22.8"),
    (["Infection", "postprocedural"], "T81.40"),
    (["Infection", "wound", "postprocedural", "surgical site"], "T81.49"),
    (["Infection", "urinary (tract)"], "N39.0"),
    (["Hypertension"], "I10"),
    (["Hypertension", "essential"], "I10"),
    (["Pressure", "blood", "high"], "I10"),
    (["Failure", "heart"], "I50.9"),
    (["Failure", "heart", "systolic"], "I50.2"),
    (["Failure", "heart", "systolic", "unspecified"], "I50.20"),
    (["Failure", "heart", "systolic", "acute"], "I50.21"),
    (["Failure", "heart", "systolic", "chronic"], "I50.22"),
    (["Fibrillation", "atrial"], "I48.91"),
    (["Fibrillation", "atrial", "paroxysmal"], "I48.0"),
    (["Pneumonia"], "J18.9"),
    (["Pneumonia", "lobar"], "J18.1"),
    (["Disease", "pulmonary", "chronic obstructive"], "J44.9"),
    (["Disease", "pulmonary", "chronic obstructive", "with exacerbation (acute)"], "J44.1"),
    (["COPD"], "J44.9"),
    (["Diabetes", "type 2"], "E11.9"),
    (["Diabetes", "type 2", "with hyperglycemia"], "E11.65"),
    (["Diabetes", "type 2", "with nephropathy"], "E11.21"),
    (["Diabetes", "type 2", "with chronic kidney disease"], "E11.22"),
    (["Hyperlipidemia"], "E78.5"),
    (["Hypercholesterolemia", "pure"], "E78.00"),
    (["Depression"], "F32.A"),
    (["Disorder", "depressive", "major", "single episode"], "F32.9"),
    (["Anxiety"], "F41.9"),
    (["Disorder", "anxiety", "generalized"], "F41.1"),
    (["Disease", "Alzheimer's"], "G30.9"),
    (["Disease", "Alzheimer's", "early onset"], "G30.0"),
    (["Disease", "Alzheimer's", "late onset"], "G30.1"),
    (["Dementia"], "F03.90"),
    (["Dementia", "in", "Alzheimer's disease"], "F02.80"),
    (["Failure", "kidney", "acute"], "N17.9"),
    (["Injury", "kidney", "acute"], "N17.9"),
    (["Disease", "kidney", "chronic"], "N18.9"),
    (["Disease", "kidney", "chronic", "stage 3 (moderate)"], "N18.30"),
    (["History", "personal", "nicotine dependence"], "Z87.891"),
    (["History", "personal", "tobacco dependence"], "Z87.891"),
    (["History", "personal", "cerebral infarction without residual deficits"], "Z86.73"),
    (["History", "personal", "stroke NOS"], "Z86.73"),
    (["Status", "do not resuscitate"], "Z66"),
    (["DNR (do not resuscitate)"], "Z66"),
    (["Long-term drug therapy", "anticoagulants"], "Z79.01"),
]

GUIDELINES = {
    "A00–B99": "Sepsis: for a diagnosis of sepsis assign the code for the underlying systemic infection. "
               "If the organism is not specified, assign A41.9. Severe sepsis requires an additional code from "
               "subcategory R65.2. Sepsis due to a postprocedural infection is coded first with T81.44, followed "
               "by the code for the specific infection.",
    "E00–E89": "Diabetes mellitus: the diabetes codes are combination codes that include the type, the body "
               "system affected and the complications. Assign as many codes from categories E08-E13 as needed to "
               "identify all associated conditions. If the type is not documented, the default is E11.-.",
    "F01–F99": "Dementia: dementia due to an underlying physiological condition is coded with the etiology first "
               "(for example Alzheimer's disease, G30.-), followed by the manifestation code from F02.-. "
               "Depression without further specification is coded to F32.A.",
    "G00–G99": "Alzheimer's disease codes are sequenced before the dementia manifestation code. Code also any "
               "associated behavioral disturbance.",
    "I00–I99": "Hypertension: hypertension without heart or kidney involvement is coded to I10. A causal "
               "relationship between hypertension and heart involvement or chronic kidney disease is presumed.",
    "J00–J99": "COPD with an acute exacerbation is coded to J44.1. Pneumonia without a specified organism is "
               "coded to J18.9; code first any associated influenza.",
    "N00–N99": "Chronic kidney disease is classified by severity (N18.1-N18.6). When diabetes is the cause, "
               "code the diabetic chronic kidney disease first.",
    "R00–R99": "Symptom codes are not assigned when a related definitive diagnosis has been established. "
               "Severe sepsis codes (R65.2-) are never sequenced first.",
    "S00–T88": "Complications of care: the provider must document a relationship between the condition and the "
               "procedure. Postprocedural sepsis is coded with T81.44 plus an additional code for the infection.",
    "Z00–Z99": "Status and history codes (for example Z66, Z79.01, Z86.73, Z87.891) are assigned when the "
               "condition or status influences the patient's care. History codes indicate conditions that no "
               "longer exist.",
}

# (id, doc_type, text, [(code, evidence phrase)])
NOTES = [
    ("n01", "Discharge summary",
     "Patient admitted with anthrax sepsis after handling imported hides. Blood cultures grew "
     "Bacillus anthracis. History of essential hypertension, on lisinopril.",
     [("A22.7", "anthrax sepsis"), ("I10", "essential hypertension")]),
    ("n02", "Physician",
     "POD 4 after colectomy, patient febrile and hypotensive; diagnosed with postprocedural sepsis. "
     "Type 2 diabetes with hyperglycemia, insulin drip started.",
     [("T81.44", "postprocedural sepsis"), ("E11.65", "Type 2 diabetes with hyperglycemia")]),
    ("n03", "Physician",
     "Chronic obstructive pulmonary disease with acute exacerbation. Paroxysmal atrial fibrillation, "
     "rate controlled. Patient is DNR.",
     [("J44.1", "Chronic obstructive pulmonary disease with acute exacerbation"),
      ("I48.0", "Paroxysmal atrial fibrillation"), ("Z66", "DNR")]),
    ("n04", "Nursing",
     "Acute kidney injury on admission, creatinine 3.1. Generalized anxiety disorder, continues sertraline.",
     [("N17.9", "Acute kidney injury"), ("F41.1", "Generalized anxiety disorder")]),
    ("n05", "Discharge summary",
     "Alzheimer's disease, late onset, with progressive memory loss. Lobar pneumonia of the right lower lobe "
     "treated with ceftriaxone.",
     [("G30.1", "Alzheimer's disease, late onset"), ("J18.1", "Lobar pneumonia")]),
    ("n06", "Physician",
     "Acute systolic heart failure, EF 25%. Long-term anticoagulant use with warfarin. "
     "Personal history of nicotine dependence, quit 2010.",
     [("I50.21", "Acute systolic heart failure"), ("Z79.01", "Long-term anticoagulant use"),
      ("Z87.891", "Personal history of nicotine dependence")]),
    ("n07", "Consult",
     "Urinary tract infection with E. coli. Hyperlipidemia on statin. Depression.",
     [("N39.0", "Urinary tract infection"), ("E78.5", "Hyperlipidemia"), ("F32.A", "Depression")]),
    ("n08", "Physician",
     "Severe sepsis with septic shock due to pulmonary anthrax, on pressors.",
     [("R65.21", "Severe sepsis with septic shock"), ("A22.1", "pulmonary anthrax")]),
]


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    dump = lambda o: json.dumps(o, ensure_ascii=False, sort_keys=True)  # noqa: E731
    with open(OUT / "tabular.jsonl", "w", encoding="utf-8") as fh:
        for code, desc, parent, notes in TABULAR:
            fh.write(dump({"code": code, "description": desc, "parent": parent, "notes": notes}) + "\n")
    with open(OUT / "alpha_index.jsonl", "w", encoding="utf-8") as fh:
        for path, code in INDEX:
            fh.write(dump({"term_path": path, "code": code}) + "\n")
    with open(OUT / "guidelines.jsonl", "w", encoding="utf-8") as fh:
        for chapter, text in GUIDELINES.items():
            fh.write(dump({"chapter": chapter, "text": text}) + "\n")
    with open(OUT / "notes.jsonl", "w", encoding="utf-8") as fh:
        for nid, doc_type, text, ev in NOTES:
            spans = []
            for code, phrase in ev:
                start = text.index(phrase)
                spans.append({"code": code, "span": [start, start + len(phrase)]})
            rec = {"id": nid, "doc_type": doc_type, "text": text,
                   "gold": sorted({c for c, _ in ev}), "gold_evidence": spans}
            fh.write(dump(rec) + "\n")


if __name__ == "__main__":
    main()
